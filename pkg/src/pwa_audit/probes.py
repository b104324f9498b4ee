"""Network-facing checks: manifest discovery and fetch, redirect chains,
framing protection and manifest update watching.

JavaScript is never executed; JS redirects are reported from lexical
patterns only.  Every request honors ``ProbeConfig.timeout``.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import re
import time
from dataclasses import dataclass, field
from html.parser import HTMLParser
from pathlib import Path
from typing import Any, Callable, Iterator, Optional
from urllib.parse import parse_qsl
from urllib.request import getproxies_environment

import httpx

from . import __version__
from .lint import REDIRECT_PARAMS
from .manifest import MalformedJson, RawManifest, parse_manifest
from .urls import AbsoluteUrl, UnresolvableReference, UrlLike, as_url, resolve

log = logging.getLogger(__name__)

UPDATE_TRIGGERING_FIELDS = frozenset({"name", "short_name", "display", "start_url", "theme_color", "scope"})
DEFAULT_MAX_HOPS = 10


class FetchFailure(RuntimeError):
    def __init__(self, url: str, status: Optional[int] = None, reason: str = ""):
        self.url = url
        self.status = status
        detail = f"HTTP {status}" if status is not None else reason
        super().__init__(f"fetching {url} failed: {detail}")


class NoManifestLink(LookupError):
    pass


@dataclass
class ProbeConfig:
    timeout: float = 15.0
    user_agent: str = f"pwa-audit/{__version__}"
    proxy: Optional[str] = None
    # honor HTTP_PROXY / HTTPS_PROXY / NO_PROXY from the environment
    trust_env: bool = True
    retries: int = 1

    def client(self, follow_redirects: bool = False) -> httpx.Client:
        kwargs = {}
        # a custom transport disables httpx's environment proxy lookup, so
        # only install one (for connection retries) when no env proxy applies
        if self.proxy is not None or not (self.trust_env and getproxies_environment()):
            kwargs["transport"] = httpx.HTTPTransport(retries=self.retries, proxy=self.proxy)
        return httpx.Client(
            timeout=self.timeout,
            headers={"User-Agent": self.user_agent},
            follow_redirects=follow_redirects,
            trust_env=self.trust_env,
            **kwargs,
        )


def _get(client: httpx.Client, url: str) -> httpx.Response:
    try:
        return client.get(url)
    except httpx.HTTPError as exc:
        raise FetchFailure(url, reason=type(exc).__name__ + ": " + str(exc)) from exc


# -- HTML scanning ----------------------------------------------------------

class _HeadScanner(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.manifest_href: Optional[str] = None
        self.base_href: Optional[str] = None
        self.refresh: list[str] = []

    def handle_starttag(self, tag, attrs):
        a = {k.lower(): (v or "") for k, v in attrs}
        if tag == "link" and self.manifest_href is None:
            if "manifest" in a.get("rel", "").lower().split() and "href" in a:
                self.manifest_href = a["href"]
        elif tag == "base" and self.base_href is None and "href" in a:
            self.base_href = a["href"]
        elif tag == "meta" and a.get("http-equiv", "").strip().lower() == "refresh":
            self.refresh.append(a.get("content", ""))


def scan_html(html: str) -> _HeadScanner:
    scanner = _HeadScanner()
    try:
        scanner.feed(html)
        scanner.close()
    except Exception as exc:  # html.parser is lenient; keep whatever was found
        log.debug("html scan stopped early: %s", exc)
    return scanner


_REFRESH_RE = re.compile(r"^\s*\d*(?:\.\d*)?\s*[;,]?\s*(?:url\s*=\s*)?(.*)$", re.I | re.S)


def meta_refresh_target(content: str) -> Optional[str]:
    m = _REFRESH_RE.match(content)
    if not m:
        return None
    target = m.group(1).strip()
    if len(target) >= 2 and target[0] in "'\"" and target[-1] == target[0]:
        target = target[1:-1]
    elif target[:1] in ("'", '"'):
        target = target[1:]
    return target.strip() or None


_LOCATION = r"(?:\b(?:window|self|top|document)\s*\.\s*|(?<![\w$.]))location\s*"
_JS_REDIRECT = [
    re.compile(_LOCATION + r"\.\s*assign\s*\(\s*(['\"`])(.*?)\1"),
    re.compile(_LOCATION + r"\.\s*replace\s*\(\s*(['\"`])(.*?)\1"),
    re.compile(_LOCATION + r"\.\s*href\s*=(?!=)\s*(['\"`])(.*?)\1"),
    re.compile(_LOCATION + r"=(?!=)\s*(['\"`])(.*?)\1"),
]


def js_redirect_targets(html: str) -> list[str]:
    hits = []
    for pattern in _JS_REDIRECT:
        hits.extend((m.start(), m.group(2)) for m in pattern.finditer(html))
    return [t for _, t in sorted(hits)]


# -- discovery / fetch ------------------------------------------------------

def discover_manifest(page_url: UrlLike, config: Optional[ProbeConfig] = None) -> AbsoluteUrl:
    config = config or ProbeConfig()
    page_url = as_url(page_url)
    with config.client(follow_redirects=True) as client:
        resp = _get(client, str(page_url))
    if resp.status_code >= 400:
        raise FetchFailure(str(page_url), resp.status_code)
    scanner = scan_html(resp.text)
    if scanner.manifest_href is None:
        raise NoManifestLink(f"{page_url} has no <link rel=manifest>")
    base = as_url(str(resp.url))
    if scanner.base_href:
        try:
            base = resolve(base, scanner.base_href)
        except UnresolvableReference:
            pass
    return resolve(base, scanner.manifest_href)


def fetch_manifest(url: UrlLike, document_url: Optional[UrlLike] = None,
                   config: Optional[ProbeConfig] = None) -> tuple[RawManifest, dict[str, str]]:
    config = config or ProbeConfig()
    url = as_url(url)
    with config.client(follow_redirects=True) as client:
        resp = _get(client, str(url))
    if resp.status_code >= 400:
        raise FetchFailure(str(url), resp.status_code)
    raw = parse_manifest(resp.content, url, document_url or url)
    return raw, {k.lower(): v for k, v in resp.headers.items()}


# -- redirects --------------------------------------------------------------

class Mechanism(str, enum.Enum):
    HTTP_3XX = "http_3xx"
    META_REFRESH = "meta_refresh"
    DETECTED_JS_PATTERN = "detected_js_pattern"


@dataclass
class Hop:
    url: str
    mechanism: Optional[Mechanism] = None
    status: Optional[int] = None

    def to_dict(self) -> dict:
        return {"url": self.url, "mechanism": self.mechanism.value if self.mechanism else None,
                "status": self.status}


@dataclass
class RedirectReport:
    chain: list[Hop]
    cross_origin_hops: list[int] = field(default_factory=list)
    suspicious_params: list[tuple[str, str]] = field(default_factory=list)
    truncated: bool = False
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "chain": [h.to_dict() for h in self.chain],
            "cross_origin_hops": self.cross_origin_hops,
            "suspicious_params": [list(p) for p in self.suspicious_params],
            "truncated": self.truncated,
            "notes": self.notes,
        }


def _looks_absolute(value: str) -> bool:
    try:
        AbsoluteUrl.parse(value)
    except UnresolvableReference:
        return False
    return True


def suspicious_params(url: UrlLike) -> list[tuple[str, str]]:
    url = as_url(url)
    if not url.query:
        return []
    return [(k, v) for k, v in parse_qsl(url.query, keep_blank_values=True)
            if k.lower() in REDIRECT_PARAMS or _looks_absolute(v)]


def redirect_probe(url: UrlLike, max_hops: int = DEFAULT_MAX_HOPS,
                   config: Optional[ProbeConfig] = None) -> RedirectReport:
    if max_hops < 1:
        raise ValueError("max_hops must be at least 1")
    config = config or ProbeConfig()
    start = as_url(url)
    report = RedirectReport(chain=[Hop(str(start))])
    seen = {str(start)}
    with config.client() as client:
        current = report.chain[0]
        while True:
            try:
                resp = _get(client, current.url)
            except FetchFailure:
                if len(report.chain) == 1:
                    raise
                report.truncated = True
                report.notes.append(f"fetch failed at hop {len(report.chain) - 1}")
                break
            current.status = resp.status_code
            target, mechanism = None, None
            if resp.is_redirect and "location" in resp.headers:
                target, mechanism = resp.headers["location"], Mechanism.HTTP_3XX
            elif resp.status_code == 200 and "html" in resp.headers.get("content-type", "text/html"):
                body = resp.text
                scanner = scan_html(body)
                for content in scanner.refresh:
                    target = meta_refresh_target(content)
                    if target:
                        mechanism = Mechanism.META_REFRESH
                        break
                if target is None:
                    for js_target in js_redirect_targets(body):
                        if len(report.chain) > max_hops:
                            report.truncated = True
                            break
                        try:
                            report.chain.append(Hop(str(resolve(current.url, js_target)),
                                                    Mechanism.DETECTED_JS_PATTERN))
                        except UnresolvableReference:
                            report.notes.append(f"JS redirect to unanalyzable target {js_target!r}")
                    break
            if target is None:
                break
            try:
                nxt = str(resolve(current.url, target))
            except UnresolvableReference:
                report.notes.append(f"redirect to unanalyzable target {target!r}")
                break
            if nxt in seen:
                report.notes.append(f"redirect loop back to {nxt}")
                break
            if len(report.chain) > max_hops:
                report.truncated = True
                break
            seen.add(nxt)
            current = Hop(nxt, mechanism)
            report.chain.append(current)

    origins = [as_url(h.url).origin for h in report.chain]
    report.cross_origin_hops = [i for i in range(1, len(origins)) if origins[i] != origins[i - 1]]
    for hop in report.chain:
        for pair in suspicious_params(hop.url):
            if pair not in report.suspicious_params:
                report.suspicious_params.append(pair)
    return report


# -- framing ----------------------------------------------------------------

@dataclass
class FrameReport:
    url: str
    x_frame_options: Optional[str] = None
    csp_frame_ancestors: Optional[str] = None
    frameable: bool = True
    status: Optional[int] = None

    def to_dict(self) -> dict:
        return {"url": self.url, "x_frame_options": self.x_frame_options,
                "csp_frame_ancestors": self.csp_frame_ancestors, "frameable": self.frameable,
                "status": self.status}


def frame_ancestors(csp_values: list[str]) -> Optional[str]:
    for policy in csp_values:
        for directive in policy.split(";"):
            parts = directive.strip().split(None, 1)
            if parts and parts[0].lower() == "frame-ancestors":
                return parts[1].strip() if len(parts) > 1 else ""
    return None


def ancestors_allow_foreign(value: str) -> bool:
    """Whether a frame-ancestors source list admits an arbitrary foreign origin."""
    sources = value.lower().split()
    return any(s in ("*", "https:", "http:") for s in sources)


def xfo_blocks(value: str) -> bool:
    tokens = {t.strip().upper() for t in value.split(",") if t.strip()}
    return bool(tokens) and tokens <= {"DENY", "SAMEORIGIN"}


def judge_framing(url: str, headers: httpx.Headers | dict) -> FrameReport:
    if isinstance(headers, dict):
        headers = httpx.Headers(headers)
    xfo_values = headers.get_list("x-frame-options")
    xfo = ", ".join(xfo_values) if xfo_values else None
    csp = frame_ancestors(headers.get_list("content-security-policy"))
    blocked = (xfo is not None and xfo_blocks(xfo)) or (csp is not None and not ancestors_allow_foreign(csp))
    return FrameReport(url, xfo, csp, not blocked)


def frame_protection_probe(url: UrlLike, config: Optional[ProbeConfig] = None) -> FrameReport:
    config = config or ProbeConfig()
    url = str(as_url(url))
    with config.client() as client:
        resp = _get(client, url)
    report = judge_framing(url, resp.headers)
    report.status = resp.status_code
    return report


# -- update watching --------------------------------------------------------

@dataclass(frozen=True)
class FieldChange:
    field: str
    old: Any
    new: Any
    update_triggering: bool

    def to_dict(self) -> dict:
        return {"field": self.field, "old": self.old, "new": self.new,
                "update_triggering": self.update_triggering}


@dataclass(frozen=True)
class UpdateDiff:
    timestamp: float
    url: str
    changed_fields: tuple[FieldChange, ...]

    @property
    def triggering(self) -> tuple[FieldChange, ...]:
        return tuple(c for c in self.changed_fields if c.update_triggering)

    def to_dict(self) -> dict:
        return {"timestamp": self.timestamp, "url": self.url,
                "changed_fields": [c.to_dict() for c in self.changed_fields]}


_ABSENT = object()


def diff_fields(old: dict, new: dict) -> list[FieldChange]:
    changes = []
    for key in list(old) + [k for k in new if k not in old]:
        a, b = old.get(key, _ABSENT), new.get(key, _ABSENT)
        if a != b or type(a) is not type(b):
            changes.append(FieldChange(key, None if a is _ABSENT else a, None if b is _ABSENT else b,
                                       key in UPDATE_TRIGGERING_FIELDS))
    return changes


class ManifestStore:
    """Per-URL baseline: ``<sha256(url)>.json`` holding the body and its hash."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, url: str) -> Path:
        return self.root / (hashlib.sha256(url.encode()).hexdigest()[:32] + ".json")

    def get(self, url: str) -> Optional[dict]:
        path = self._path(url)
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def put(self, url: str, body: str) -> dict:
        record = {"url": url, "sha256": hashlib.sha256(body.encode("utf-8")).hexdigest(),
                  "body": body, "stored_at": time.time()}
        tmp = self._path(url).with_suffix(".tmp")
        tmp.write_text(json.dumps(record, ensure_ascii=False), encoding="utf-8")
        tmp.replace(self._path(url))
        return record


class ManifestWatcher:
    def __init__(self, url: UrlLike, store: ManifestStore, config: Optional[ProbeConfig] = None):
        self.url = str(as_url(url))
        self.store = store
        self.config = config or ProbeConfig()

    def _fetch_body(self) -> str:
        with self.config.client(follow_redirects=True) as client:
            resp = _get(client, self.url)
        if resp.status_code >= 400:
            raise FetchFailure(self.url, resp.status_code)
        return resp.content.decode("utf-8", errors="replace")

    def poll(self) -> Optional[UpdateDiff]:
        body = self._fetch_body()
        new_fields = parse_manifest(body, self.url, self.url).fields
        baseline = self.store.get(self.url)
        if baseline is None:
            self.store.put(self.url, body)
            return None
        if baseline["sha256"] == hashlib.sha256(body.encode("utf-8")).hexdigest():
            return None
        try:
            old_fields = parse_manifest(baseline["body"], self.url, self.url).fields
        except MalformedJson:
            old_fields = {}
        self.store.put(self.url, body)
        changes = diff_fields(dict(old_fields), dict(new_fields))
        if not changes:
            return None
        return UpdateDiff(time.time(), self.url, tuple(changes))


def watch_manifest(url: UrlLike, interval_seconds: float, store_path: str | Path,
                   config: Optional[ProbeConfig] = None, max_polls: Optional[int] = None,
                   sleep: Callable[[float], None] = time.sleep) -> Iterator[UpdateDiff]:
    """Poll ``url`` and yield a diff whenever its field map changes.

    The first poll must succeed (it establishes the baseline when none is
    stored); later fetch or parse failures are logged as misses.
    """
    watcher = ManifestWatcher(url, ManifestStore(store_path), config)
    polls = 0
    while max_polls is None or polls < max_polls:
        if polls:
            sleep(interval_seconds)
        try:
            diff = watcher.poll()
        except (FetchFailure, MalformedJson) as exc:
            if polls == 0:
                raise
            log.warning("poll miss for %s: %s", watcher.url, exc)
            diff = None
        polls += 1
        if diff is not None:
            yield diff
