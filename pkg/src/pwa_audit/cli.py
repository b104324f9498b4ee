"""Command-line entry point.

Exit codes: 0 clean, 1 findings at or above the threshold, 2 input error,
3 internal error.  Human text goes to stdout, diagnostics to stderr; with
``--format json`` stdout carries exactly one JSON document.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from . import catalog as cat
from . import corpus as corp
from . import fuzzer, probes
from .lint import SCHEMA_VERSION, LintReport, Mode, lint_text, render_text
from .manifest import MalformedJson
from .rules import Severity
from .sw import cache_only_risk, classify_sw
from .urls import UnresolvableReference, resolve

log = logging.getLogger("pwa_audit")

EXIT_CLEAN, EXIT_FINDINGS, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2, 3
# reserved name (RFC 2606): file lints without --url have no real origin
PLACEHOLDER_URL = "https://manifest.invalid/"
MANIFEST_SUFFIXES = (".webmanifest", ".json")


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _emit(args, payload: dict, text: str) -> None:
    if args.format == "json":
        doc = {"schema_version": SCHEMA_VERSION, "tool_version": __version__, **payload}
        print(json.dumps(doc, indent=2, ensure_ascii=False))
    else:
        print(text)


def _probe_config(args) -> probes.ProbeConfig:
    return probes.ProbeConfig(timeout=args.timeout, user_agent=args.user_agent or probes.ProbeConfig.user_agent,
                              proxy=args.proxy)


# -- lint / validate --------------------------------------------------------

def _expand(paths: Sequence[str]) -> list[Path]:
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(q for q in p.iterdir() if q.suffix in MANIFEST_SUFFIXES and q.is_file()))
        else:
            out.append(p)
    return out


def _lint_one(path: Path, args, corpus_index, extra) -> dict:
    document_url = args.url or PLACEHOLDER_URL
    entry: dict = {"path": str(path)}
    try:
        data = path.read_bytes()
    except OSError as exc:
        entry["error"] = f"cannot read {path}: {exc.strerror or exc}"
        return entry
    source_url = resolve(document_url, path.name)
    report = lint_text(
        data, source_url, document_url, corpus_index,
        mode=Mode(args.mode),
        has_service_worker=args.has_sw,
        origin_known=args.url is not None,
        extra_findings=extra,
    )
    report.source = str(path)
    entry["report"] = report
    if any(f.rule_id == "SYN-JSON-MALFORMED" for f in report.findings):
        entry["error"] = f"{path}: malformed manifest"
    return entry


def lint_many(paths: Sequence[str], args, corpus_index=None, extra=()) -> tuple[list[dict], Counter]:
    """Lint every input; failures stay per-entry.  Ordered by input path."""
    files = _expand(paths)
    if not files:
        raise InputError("no manifest inputs")
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        entries = list(pool.map(lambda p: _lint_one(p, args, corpus_index, extra), files))
    entries.sort(key=lambda e: e["path"])
    histogram = Counter(f.rule_id for e in entries if "report" in e for f in e["report"].findings)
    return entries, histogram


def _sw_extra(args) -> list:
    if not args.sw:
        return []
    args.has_sw = True
    finding = cache_only_risk(classify_sw(_read_text(args.sw)))
    return [finding] if finding else []


def _load_corpus(args):
    if not args.corpus:
        return None
    return corp.ingest(args.corpus, args.corpus_format)


def _batch_exit(entries: list[dict], threshold: Severity) -> int:
    code = EXIT_CLEAN
    for e in entries:
        if "error" in e:
            code = max(code, EXIT_INPUT)
        report: Optional[LintReport] = e.get("report")
        if report is None:
            continue
        if any(f.severity.rank >= threshold.rank for f in report.findings):
            code = max(code, EXIT_FINDINGS)
    return code


def _entries_json(entries: list[dict]) -> list[dict]:
    out = []
    for e in entries:
        item = {"path": e["path"]}
        if "report" in e:
            item["report"] = e["report"].to_dict()
        if "error" in e:
            item["error"] = e["error"]
        out.append(item)
    return out


def cmd_lint(args) -> int:
    extra = _sw_extra(args)
    entries, histogram = lint_many(args.paths, args, _load_corpus(args), extra)
    for e in entries:
        if "error" in e:
            print(e["error"], file=sys.stderr)
    text = "\n\n".join(render_text(e["report"]) if "report" in e else f"{e['path']}\n  error: {e['error']}"
                       for e in entries)
    if len(entries) > 1:
        text += "\n\nfindings by rule:\n" + "\n".join(f"  {r:<26} {n}" for r, n in sorted(histogram.items()))
    _emit(args, {"entries": _entries_json(entries), "histogram": dict(sorted(histogram.items()))}, text)
    return _batch_exit(entries, Severity(args.threshold))


def cmd_validate(args) -> int:
    """Syntax rules and installability only."""
    entries, _ = lint_many(args.paths, args)
    for e in entries:
        report = e.get("report")
        if report is not None:
            report.findings = [f for f in report.findings if f.rule_id.startswith("SYN-")]
    code = _batch_exit(entries, Severity(args.threshold))
    for e in entries:
        report = e.get("report")
        if report is not None and report.installability is not None and not report.installability.installable:
            code = max(code, EXIT_FINDINGS)
    text = "\n\n".join(render_text(e["report"]) if "report" in e else f"{e['path']}\n  error: {e['error']}"
                       for e in entries)
    _emit(args, {"entries": _entries_json(entries)}, text)
    return code


# -- corpus -----------------------------------------------------------------

def cmd_corpus(args) -> int:
    index = corp.ingest(args.source, args.corpus_format)
    if args.action == "ingest":
        payload = {"entry_count": index.entry_count, "malformed_count": index.malformed_count,
                   "duplicate_count": index.duplicate_count}
        text = "\n".join(f"{k}: {v}" for k, v in payload.items())
    elif args.action == "stats":
        payload = index.to_dict()
        text = json.dumps(payload, indent=2, ensure_ascii=False)
    elif args.action == "dups":
        rows = corp.duplicate_names(index)
        payload = {"duplicate_names": [list(r) for r in rows], "summary": corp.duplicate_summary(index),
                   "icon_collisions": [list(r) for r in corp.icon_collisions(index)]}
        text = "\n".join(f"{n:>6}  {name}" for name, n in rows) or "no duplicate names"
    else:
        rows = corp.frequency_table(index, args.field)
        if args.csv:
            sys.stdout.write(corp.frequency_csv(rows))
            return EXIT_CLEAN
        payload = {"field": args.field, "frequencies": [list(r) for r in rows]}
        text = "\n".join(f"{n:>6}  {token}" for token, n in rows)
    _emit(args, payload, text)
    return EXIT_CLEAN


# -- fuzz -------------------------------------------------------------------

def cmd_fuzz(args) -> int:
    if args.action == "gen":
        base = fuzzer.parse_base(Path(args.base).read_bytes(), args.url or "http://127.0.0.1:8000/")
        session = fuzzer.new_session(base, args.seed, args.interval, args.session, pairs=args.pairs)
        payload = {"session_id": session.session_id, "session": args.session, "seed": session.seed,
                   "mutants": [{"mutant_id": m.mutant_id, "operator": m.operator} for m in session.mutants]}
        text = f"session {session.session_id}: {len(session.mutants)} mutants written to {args.session}"
        _emit(args, payload, text)
        return EXIT_CLEAN
    session = fuzzer.load_session(args.session)
    if args.action == "serve":
        print(f"serving {len(session.mutants)} mutants on http://{args.bind}/ "
              f"(rotating every {session.interval_seconds}s)", file=sys.stderr)
        try:
            fuzzer.serve_session(session, args.bind)
        except KeyboardInterrupt:
            pass
        return EXIT_CLEAN
    if args.action == "record":
        fuzzer.record_observation(session, args.mutant_id, args.outcome, args.note)
        _emit(args, {"recorded": {"mutant_id": args.mutant_id, "outcome": args.outcome, "note": args.note},
                     "observations": len(session.observations)},
              f"recorded {args.outcome} for {args.mutant_id} ({len(session.observations)} observations)")
        return EXIT_CLEAN
    report = fuzzer.session_report(session)
    lines = []
    for row in report:
        outcomes = ", ".join(f"{k}={v}" for k, v in row["outcomes"].items()) or "unobserved"
        lines.append(f"{row['mutant_id']}  {row['operator']:<24} served={row['serve_count']:<4} {outcomes}")
    _emit(args, {"session_id": session.session_id, "mutants": report}, "\n".join(lines))
    return EXIT_CLEAN


# -- service worker ---------------------------------------------------------

def _read_text(location: str, config: Optional[probes.ProbeConfig] = None) -> str:
    if location.startswith(("http://", "https://")):
        config = config or probes.ProbeConfig()
        with config.client(follow_redirects=True) as client:
            resp = probes._get(client, location)
        if resp.status_code >= 400:
            raise probes.FetchFailure(location, resp.status_code)
        return resp.text
    return Path(location).read_text(encoding="utf-8", errors="replace")


def cmd_sw(args) -> int:
    result = classify_sw(_read_text(args.source, _probe_config(args)))
    finding = cache_only_risk(result)
    lines = [f"strategy: {result.strategy.value} ({result.confidence.value})"]
    lines += [f"  {e.pattern} lines {e.start_line}-{e.end_line}" for e in result.evidence]
    if finding:
        lines.append(f"  W {finding.rule_id}: {finding.message}")
    payload = result.to_dict()
    payload["findings"] = [finding.to_dict()] if finding else []
    _emit(args, payload, "\n".join(lines))
    if finding and finding.severity.rank >= Severity(args.threshold).rank:
        return EXIT_FINDINGS
    return EXIT_CLEAN


# -- probes -----------------------------------------------------------------

def cmd_probe(args) -> int:
    config = _probe_config(args)
    if args.action == "discover":
        url = probes.discover_manifest(args.url, config)
        _emit(args, {"page_url": args.url, "manifest_url": str(url)}, str(url))
    elif args.action == "redirects":
        report = probes.redirect_probe(args.url, args.max_hops, config)
        lines = [f"{i}: {h.url} [{h.mechanism.value if h.mechanism else 'start'}"
                 f"{' ' + str(h.status) if h.status is not None else ''}]" for i, h in enumerate(report.chain)]
        lines.append(f"cross-origin hops: {report.cross_origin_hops}")
        lines += [f"suspicious parameter: {k}={v}" for k, v in report.suspicious_params]
        lines += [f"note: {n}" for n in report.notes]
        _emit(args, report.to_dict(), "\n".join(lines))
    elif args.action == "frames":
        report = probes.frame_protection_probe(args.url, config)
        text = (f"{report.url}: {'frameable' if report.frameable else 'not frameable'}"
                f" (X-Frame-Options={report.x_frame_options}, frame-ancestors={report.csp_frame_ancestors})")
        _emit(args, report.to_dict(), text)
    else:
        diffs = []
        try:
            for diff in probes.watch_manifest(args.url, args.interval, args.store, config, args.polls):
                if args.format == "json":
                    diffs.append(diff.to_dict())
                    continue
                for c in diff.changed_fields:
                    mark = "update" if c.update_triggering else "silent"
                    print(f"[{mark}] {c.field}: {c.old!r} -> {c.new!r}", flush=True)
        except KeyboardInterrupt:
            pass
        if args.format == "json":
            _emit(args, {"url": args.url, "diffs": diffs}, "")
    return EXIT_CLEAN


# -- catalog ----------------------------------------------------------------

def cmd_catalog(args) -> int:
    if args.action == "tally":
        tally = cat.cia_tally(cat.load_catalog())
        d = tally.as_dict()
        _emit(args, {"tally": d}, f"C={d['C']} I={d['I']} A={d['A']} total={d['total']}")
    elif args.action == "list":
        rows = cat.load_catalog()
        payload = {"rows": [{"risk_name": r.risk_name, "cia": r.cia, "browser_count": r.browser_count,
                             "phase": r.phase} for r in rows]}
        text = "\n".join(f"{r.cia} {r.browser_count:>2} {r.phase:<18} {r.risk_name}" for r in rows)
        _emit(args, payload, text)
    elif args.action == "support":
        p = cat.browser_support(args.browser, args.os)
        _emit(args, {"browser": p.browser.value, "os": p.os.value, "platform": p.platform,
                     "install_support": p.install_support, "profile_support": p.profile_support},
              f"{p.browser.value} on {p.os.value}: install={p.install_support} profiles={p.profile_support}")
    else:
        guide = cat.uninstall_guide(args.browser, args.os)
        _emit(args, {"browser": guide.browser.value, "os": guide.os.value, "steps": list(guide.steps),
                     "fallback": guide.fallback}, guide.render())
    return EXIT_CLEAN


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=("text", "json"), default="text")
    common.add_argument("--threshold", choices=[s.value for s in Severity], default="warning",
                        help="lowest severity that makes the exit code 1")
    common.add_argument("-v", "--verbose", action="store_true")

    net = argparse.ArgumentParser(add_help=False)
    net.add_argument("--timeout", type=float, default=15.0, help="seconds per request")
    net.add_argument("--user-agent")
    net.add_argument("--proxy", help="proxy URL (default: HTTP_PROXY/HTTPS_PROXY from the environment)")

    corpus_src = argparse.ArgumentParser(add_help=False)
    corpus_src.add_argument("--corpus-format", choices=("jsonl", "directory"), default="jsonl")

    lintish = argparse.ArgumentParser(add_help=False)
    lintish.add_argument("paths", nargs="+", help="manifest files or directories")
    lintish.add_argument("--url", help=f"document URL the manifest belongs to (default {PLACEHOLDER_URL})")
    lintish.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.CHROME_LENIENT.value)
    lintish.add_argument("--has-sw", action="store_true", help="the page registers a service worker")
    lintish.add_argument("--jobs", type=int, default=1)

    parser = _Parser(prog="pwa-audit", description="Security linter and test harness for web app manifests.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("lint", parents=[common, lintish, corpus_src], help="run all rules")
    p.add_argument("--corpus", help="corpus for duplicate-name/icon/id rules")
    p.add_argument("--sw", help="service-worker script to check for cache-only handling")
    p.set_defaults(func=cmd_lint)

    p = sub.add_parser("validate", parents=[common, lintish], help="syntax rules and installability")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("corpus", help="corpus statistics")
    csub = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    for action in ("ingest", "stats", "dups", "freq"):
        a = csub.add_parser(action, parents=[common, corpus_src])
        a.add_argument("source")
        if action == "freq":
            a.add_argument("--field", choices=corp.FREQUENCY_FIELDS, default="name")
            a.add_argument("--csv", action="store_true")
        a.set_defaults(func=cmd_corpus)

    p = sub.add_parser("fuzz", help="manifest mutation harness")
    fsub = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    a = fsub.add_parser("gen", parents=[common])
    a.add_argument("base", help="base manifest file")
    a.add_argument("--session", required=True, help="session file to create")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--interval", type=int, default=fuzzer.DEFAULT_INTERVAL)
    a.add_argument("--url", help="document URL the base manifest is served from")
    a.add_argument("--pairs", action="store_true", help="also compose two operators per mutant")
    a = fsub.add_parser("serve", parents=[common])
    a.add_argument("--session", required=True)
    a.add_argument("--bind", default="127.0.0.1:8000")
    a = fsub.add_parser("record", parents=[common])
    a.add_argument("--session", required=True)
    a.add_argument("mutant_id")
    a.add_argument("outcome", choices=[o.value for o in fuzzer.Outcome])
    a.add_argument("--note", default="")
    a = fsub.add_parser("report", parents=[common])
    a.add_argument("--session", required=True)
    for a in fsub.choices.values():
        a.set_defaults(func=cmd_fuzz)

    p = sub.add_parser("sw", help="service-worker cache strategy")
    ssub = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    a = ssub.add_parser("classify", parents=[common, net])
    a.add_argument("source", help="script file or URL")
    a.set_defaults(func=cmd_sw)

    p = sub.add_parser("probe", help="live network checks")
    psub = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    for action in ("discover", "redirects", "frames", "watch"):
        a = psub.add_parser(action, parents=[common, net])
        a.add_argument("url")
        if action == "redirects":
            a.add_argument("--max-hops", type=int, default=probes.DEFAULT_MAX_HOPS)
        if action == "watch":
            a.add_argument("--store", required=True, help="directory for baselines")
            a.add_argument("--interval", type=float, default=60.0)
            a.add_argument("--polls", type=int, help="stop after this many polls")
        a.set_defaults(func=cmd_probe)

    p = sub.add_parser("catalog", help="violation catalog")
    ksub = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    for action in ("tally", "list", "support", "uninstall"):
        a = ksub.add_parser(action, parents=[common])
        if action in ("support", "uninstall"):
            a.add_argument("browser")
            a.add_argument("os")
        a.set_defaults(func=cmd_catalog)
    return parser


INPUT_ERRORS = (
    InputError, OSError, MalformedJson, UnresolvableReference, corp.SourceUnreadable,
    cat.UnknownCombination, fuzzer.UnknownMutant, probes.FetchFailure, probes.NoManifestLink,
    ValueError,
)


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_INPUT
    if getattr(args, "func", None) is None:
        parser.print_help(sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception:
        log.exception("internal error")
        return EXIT_INTERNAL


def main() -> None:
    sys.exit(run())
