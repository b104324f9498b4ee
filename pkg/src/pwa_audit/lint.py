"""Syntactic and semantic manifest checks, installability judgement and
site classification."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Any, Optional, Protocol
from urllib.parse import parse_qsl

from . import __version__
from .manifest import (
    DOCUMENTED_DISPLAY,
    DisplayMode,
    MalformedJson,
    Manifest,
    RawManifest,
    normalize,
    normalize_name,
    parse_manifest,
)
from .rules import ORIGIN_DEPENDENT, RULES, Severity
from .urls import (
    AbsoluteUrl,
    UnresolvableReference,
    UrlLike,
    as_url,
    is_parent_path_ref,
    is_secure_context,
    query_of,
    resolve,
)

SCHEMA_VERSION = 1

NAME_LENGTH_LIMIT = 1000
TRACKING_PARAMS = frozenset({"id", "uid", "user", "token", "session", "ref"})
REDIRECT_PARAMS = frozenset({"redirect", "url", "next", "goto", "return", "dest"})

# defaults shipped by app generators and starter kits
TEMPLATE_NAMES = frozenset(normalize_name(n) for n in (
    "Create React App Sample",
    "React App",
    "Vite App",
    "Vite + React",
    "Vue App",
    "Angular App",
    "Ionic App",
    "My App",
    "My PWA",
    "Gatsby Default Starter",
    "gatsby-starter-default",
    "Next.js PWA",
    "Expo App",
    "Svelte App",
))

_ID_TOKEN = re.compile(
    r"^(?:\d{3,}"
    r"|[0-9a-fA-F]{8}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{12}"
    r"|(?=[0-9a-fA-F]*\d)[0-9a-fA-F]{16,})$"
)
_URI_PATH = re.compile(r"^(?:[^:/?#]+:)?(?://[^/?#]*)?([^?#]*)")


class Mode(str, enum.Enum):
    STRICT_W3C = "strict_w3c"
    CHROME_LENIENT = "chrome_lenient"


class SiteCategory(str, enum.Enum):
    INACCESSIBLE_OR_NO_MANIFEST = "inaccessible_or_no_manifest"
    INVALID_MANIFEST = "invalid_manifest"
    INSTALLABLE_WITH_SW = "installable_with_sw"
    INSTALLABLE_WITHOUT_SW = "installable_without_sw"
    NOT_INSTALLABLE = "not_installable"


@dataclass(frozen=True)
class Finding:
    rule_id: str
    severity: Severity
    cia: tuple[str, ...]
    phase: str
    field_path: str
    message: str
    remediation: str

    def to_dict(self) -> dict:
        return {
            "rule_id": self.rule_id,
            "severity": self.severity.value,
            "cia": list(self.cia),
            "phase": self.phase,
            "field_path": self.field_path,
            "message": self.message,
            "remediation": self.remediation,
        }


def make_finding(rule_id: str, field_path: str, message: str, severity: Optional[Severity] = None) -> Finding:
    rule = RULES[rule_id]
    return Finding(
        rule_id=rule_id,
        severity=severity or rule.severity,
        cia=tuple(c for c in "CIA" if c in rule.cia),
        phase=rule.phase.value,
        field_path=field_path,
        message=message,
        remediation=rule.remediation,
    )


def sort_findings(findings) -> list[Finding]:
    return sorted(findings, key=lambda f: (f.field_path, f.rule_id))


def filter_findings(findings, threshold: Severity) -> list[Finding]:
    return [f for f in findings if f.severity.rank >= threshold.rank]


class CorpusLookup(Protocol):
    def names_elsewhere(self, key: str, document_url: str) -> int: ...
    def icon_origins_elsewhere(self, src: str, origin: str) -> set: ...
    def ids_elsewhere(self, origin: str, app_id: str, document_url: str) -> int: ...


def _looks_absolute(value: str) -> bool:
    try:
        AbsoluteUrl.parse(value)
    except UnresolvableReference:
        return False
    return True


def _start_url_findings(m: Manifest) -> list[Finding]:
    raw = m.start_url_raw
    out: list[Finding] = []
    if raw is None:
        return out
    if not raw.strip():
        return [make_finding("SYN-SU-EMPTY", "start_url", "start_url is an empty string")]
    if m.start_url_fell_back:
        out.append(make_finding(
            "SEC-SU-XORIGIN", "start_url",
            f"start_url {raw!r} does not resolve to the document's origin; browsers fall back to {m.start_url}"))
    if is_parent_path_ref(raw):
        out.append(make_finding("SEC-SU-PARENT", "start_url", f"start_url {raw!r} uses a parent path"))
    query = query_of(raw)
    if query:
        params = parse_qsl(query, keep_blank_values=True)
        tracking = sorted({k for k, _ in params if k.lower() in TRACKING_PARAMS})
        if tracking:
            out.append(make_finding(
                "SEC-SU-TRACK", "start_url",
                f"start_url carries identifying parameters: {', '.join(tracking)}"))
        else:
            out.append(make_finding(
                "SEC-SU-TRACK", "start_url", f"start_url carries a query string ?{query}", Severity.INFO))
        redirects = [(k, v) for k, v in params if k.lower() in REDIRECT_PARAMS or _looks_absolute(v)]
        if redirects:
            shown = ", ".join(f"{k}={v}" for k, v in redirects)
            out.append(make_finding("SEC-SU-REDIRECT-PARAM", "start_url",
                                    f"start_url carries redirect-style parameters: {shown}"))
    return out


def _scope_findings(m: Manifest) -> list[Finding]:
    raw = m.scope_raw
    if raw is None:
        return []
    if not raw.strip():
        return [make_finding("SYN-SC-EMPTY", "scope", "scope is an empty string")]
    out = []
    if is_parent_path_ref(raw):
        out.append(make_finding("SEC-SC-PARENT", "scope", f"scope {raw!r} uses a parent path"))
    try:
        resolved = resolve(m.document_url, raw)
    except UnresolvableReference as exc:
        out.append(make_finding("SEC-SC-XORIGIN", "scope", f"scope {raw!r} is not an http(s) URL: {exc}"))
        return out
    if resolved.origin != m.document_url.origin:
        out.append(make_finding("SEC-SC-XORIGIN", "scope",
                                f"scope {resolved} is on {resolved.origin}, not {m.document_url.origin}"))
    elif not resolved.path.endswith("/"):
        out.append(make_finding("SEC-SC-NO-TRAILING-SLASH", "scope",
                                f"scope path {resolved.path!r} also matches sibling paths with the same prefix"))
    return out


def _name_findings(m: Manifest, raw: RawManifest, corpus, mode) -> list[Finding]:
    name = m.name
    if name is None or not name.strip():
        sev = Severity.ERROR if mode == Mode.STRICT_W3C else Severity.WARNING
        what = "missing" if name is None else "empty"
        return [make_finding("SEC-NAME-EMPTY", "name", f"name is {what}", sev)]
    out = []
    if len(name) > NAME_LENGTH_LIMIT:
        out.append(make_finding("SEC-NAME-LONG", "name",
                                f"name has {len(name)} characters (limit {NAME_LENGTH_LIMIT})"))
    key = normalize_name(name)
    if key in TEMPLATE_NAMES:
        out.append(make_finding("SEC-NAME-TEMPLATE", "name", f"name {name.strip()!r} is a template default"))
    if corpus is not None:
        others = corpus.names_elsewhere(key, str(m.document_url))
        if others:
            out.append(make_finding("SEC-NAME-DUP", "name",
                                    f"name {name.strip()!r} is used by {others} other app(s) in the corpus"))
    return out


def _icon_findings(m: Manifest, corpus) -> list[Finding]:
    out = []
    doc_origin = m.document_url.origin
    for icon in m.icons:
        path = f"icons[{icon.index}].src"
        if icon.src.origin != doc_origin:
            out.append(make_finding("SEC-ICON-XORIGIN", path, f"icon {icon.src} is served by {icon.src.origin}"))
        if corpus is not None:
            others = corpus.icon_origins_elsewhere(str(icon.src), str(doc_origin))
            if others:
                out.append(make_finding("SEC-ICON-DUP", path,
                                        f"icon {icon.src} is also used by {', '.join(sorted(others))}"))
    return out


def _display_findings(m: Manifest, raw: RawManifest) -> list[Finding]:
    if "display" not in raw.fields:
        return []
    if m.display_raw not in DOCUMENTED_DISPLAY:
        return [make_finding("SYN-DISPLAY-UNKNOWN", "display",
                             f"display {m.display_raw!r} is not one of {', '.join(DOCUMENTED_DISPLAY)}")]
    if m.display is DisplayMode.FULLSCREEN:
        return [make_finding("SEC-DISPLAY-HIDES-URL", "display",
                             "fullscreen hides the URL and all browser UI; use minimal-ui")]
    if m.display is DisplayMode.STANDALONE:
        return [make_finding("SEC-DISPLAY-HIDES-URL", "display",
                             "standalone hides the URL bar; minimal-ui keeps it visible", Severity.INFO)]
    return []


def _id_findings(m: Manifest, corpus) -> list[Finding]:
    raw = m.id
    if raw is None or not raw.strip():
        return []
    out = []
    app_id = raw.strip()
    segments = [s for s in _URI_PATH.match(app_id).group(1).split("/") if s]
    if query_of(app_id) or any(_ID_TOKEN.match(s) for s in segments):
        out.append(make_finding("SEC-ID-TRACK", "id",
                                f"id {app_id!r} looks user- or tracking-specific; best practice is \"/\""))
    try:
        resolved = resolve(m.start_url, app_id)
    except UnresolvableReference:
        resolved = None
    if resolved is None or resolved.origin != m.document_url.origin:
        out.append(make_finding("SEC-ID-XORIGIN", "id",
                                f"id {app_id!r} does not resolve to the app's origin"))
    if corpus is not None:
        others = corpus.ids_elsewhere(str(m.document_url.origin), app_id, str(m.document_url))
        if others:
            out.append(make_finding("SEC-ID-DUP", "id",
                                    f"id {app_id!r} is shared by {others} other app(s) on this origin"))
    return out


def _related_findings(m: Manifest, raw: RawManifest) -> list[Finding]:
    related = raw.fields.get("related_applications")
    has_related = isinstance(related, list) and len(related) > 0
    has_prefer = "prefer_related_applications" in raw.fields
    out = []
    if has_related and not has_prefer:
        out.append(make_finding("SEC-RELATED-UNPAIRED", "related_applications",
                                "related_applications is declared without prefer_related_applications"))
    elif has_prefer and not has_related:
        out.append(make_finding("SEC-RELATED-UNPAIRED", "prefer_related_applications",
                                "prefer_related_applications is declared without related_applications"))
    if m.prefer_related_applications is True and m.related_applications:
        targets = ", ".join(a.platform or "?" for a in m.related_applications)
        out.append(make_finding("SEC-RELATED-PREFER", "prefer_related_applications",
                                f"install prompt prefers native apps ({targets})"))
    return out


def lint(
    manifest: Manifest,
    raw: RawManifest,
    corpus: Optional[CorpusLookup] = None,
    *,
    mode: Optional[Mode] = None,
    origin_known: bool = True,
) -> list[Finding]:
    """Run every rule over ``manifest``.

    Corpus rules are skipped when ``corpus`` is None.  With
    ``origin_known=False`` (file lint without a real document URL) the
    origin-dependent rules are reported at info severity.
    """
    findings = (
        _start_url_findings(manifest)
        + _scope_findings(manifest)
        + _name_findings(manifest, raw, corpus, mode)
        + _icon_findings(manifest, corpus)
        + _display_findings(manifest, raw)
        + _id_findings(manifest, corpus)
        + _related_findings(manifest, raw)
        + [make_finding("SEC-UNKNOWN-FIELD", name, f"undocumented field {name!r}")
           for name in manifest.unknown_fields]
    )
    if not origin_known:
        findings = [
            make_finding(f.rule_id, f.field_path,
                         f.message + " (document origin unknown; pass --url to confirm)", Severity.INFO)
            if f.rule_id in ORIGIN_DEPENDENT else f
            for f in findings
        ]
    return sort_findings(findings)


# -- installability ---------------------------------------------------------

REQUIREMENTS = ("name", "icons", "start_url", "display", "secure_context", "service_worker")
MANIFEST_REQUIREMENTS = frozenset({"name", "icons", "start_url", "display"})
INSTALLABLE_DISPLAY = (DisplayMode.STANDALONE, DisplayMode.FULLSCREEN, DisplayMode.MINIMAL_UI)


@dataclass(frozen=True)
class InstallabilityReport:
    installable: bool
    mode: Mode
    missing: tuple[str, ...] = ()
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"installable": self.installable, "mode": self.mode.value,
                "missing": list(self.missing), "notes": list(self.notes)}


def check_installable(manifest: Manifest, has_service_worker: bool, is_secure_context: bool,
                      mode: Mode = Mode.CHROME_LENIENT) -> InstallabilityReport:
    mode = Mode(mode)
    missing, notes = [], []
    if manifest.name is None or not manifest.name.strip():
        missing.append("name")
    if not manifest.icons:
        missing.append("icons")
    if manifest.start_url_raw is None or manifest.start_url_fell_back:
        missing.append("start_url")
    if manifest.display not in INSTALLABLE_DISPLAY:
        missing.append("display")
    if not is_secure_context:
        missing.append("secure_context")
    if not has_service_worker:
        if mode is Mode.STRICT_W3C:
            missing.append("service_worker")
        else:
            notes.append("no service worker; not required in chrome_lenient mode")
    if manifest.prefer_related_applications is True and manifest.related_applications:
        notes.append("prefer_related_applications may divert the install prompt to a native app")
    return InstallabilityReport(not missing, mode, tuple(missing), tuple(notes))


def classify_site(manifest_result: str, installability: Optional[InstallabilityReport],
                  has_service_worker: bool) -> SiteCategory:
    """Place a site in the top-site survey taxonomy.

    ``manifest_result`` is one of ``absent``, ``malformed``, ``present``.
    """
    if manifest_result == "absent":
        return SiteCategory.INACCESSIBLE_OR_NO_MANIFEST
    if manifest_result == "malformed":
        return SiteCategory.INVALID_MANIFEST
    if manifest_result != "present":
        raise ValueError(f"unknown manifest result {manifest_result!r}")
    if installability is None:
        return SiteCategory.NOT_INSTALLABLE
    if MANIFEST_REQUIREMENTS.intersection(installability.missing):
        return SiteCategory.INVALID_MANIFEST
    if not installability.installable:
        return SiteCategory.NOT_INSTALLABLE
    if has_service_worker:
        return SiteCategory.INSTALLABLE_WITH_SW
    return SiteCategory.INSTALLABLE_WITHOUT_SW


# -- reports ----------------------------------------------------------------

@dataclass
class LintReport:
    manifest_url: str
    document_url: str
    findings: list[Finding] = field(default_factory=list)
    installability: Optional[InstallabilityReport] = None
    parse_notes: list[str] = field(default_factory=list)
    source: Optional[str] = None

    def worst(self) -> Optional[Severity]:
        if not self.findings:
            return None
        return max((f.severity for f in self.findings), key=lambda s: s.rank)

    def to_dict(self) -> dict[str, Any]:
        out = {
            "schema_version": SCHEMA_VERSION,
            "tool_version": __version__,
            "manifest_url": self.manifest_url,
            "document_url": self.document_url,
            "findings": [f.to_dict() for f in self.findings],
            "installability": self.installability.to_dict() if self.installability else None,
            "parse_notes": list(self.parse_notes),
        }
        if self.source is not None:
            out["source"] = self.source
        return out


def lint_text(
    text: str | bytes,
    source_url: UrlLike,
    document_url: UrlLike,
    corpus: Optional[CorpusLookup] = None,
    *,
    mode: Mode = Mode.CHROME_LENIENT,
    has_service_worker: bool = False,
    secure_context: Optional[bool] = None,
    origin_known: bool = True,
    extra_findings=(),
) -> LintReport:
    """Parse, normalize, lint and judge installability in one step."""
    source_url, document_url = as_url(source_url), as_url(document_url)
    report = LintReport(str(source_url), str(document_url))
    try:
        raw = parse_manifest(text, source_url, document_url)
    except MalformedJson as exc:
        report.findings = sort_findings([make_finding("SYN-JSON-MALFORMED", "$", str(exc)), *extra_findings])
        return report
    manifest = normalize(raw)
    report.findings = sort_findings(
        lint(manifest, raw, corpus, mode=mode, origin_known=origin_known) + list(extra_findings))
    if secure_context is None:
        secure_context = is_secure_context(document_url)
    report.installability = check_installable(manifest, has_service_worker, secure_context, mode)
    report.parse_notes = list(manifest.notes)
    return report


_MARK = {Severity.ERROR: "E", Severity.WARNING: "W", Severity.INFO: "I"}


def render_text(report: LintReport) -> str:
    lines = [f"{report.source or report.manifest_url}"]
    for f in report.findings:
        lines.append(f"  {_MARK[f.severity]} {f.rule_id:<26} {f.field_path:<28} [{''.join(f.cia)}] {f.message}")
        lines.append(f"      fix: {f.remediation}")
    if not report.findings:
        lines.append("  no findings")
    inst = report.installability
    if inst is not None:
        state = "installable" if inst.installable else "not installable (missing: " + ", ".join(inst.missing) + ")"
        lines.append(f"  {inst.mode.value}: {state}")
    for note in report.parse_notes:
        lines.append(f"  note: {note}")
    return "\n".join(lines)
