"""Schema-guided manifest mutation, a rotating-manifest HTTP harness and an
append-only observation log for manual install experiments.

A session is persisted as JSONL events ``{type, timestamp, payload}`` with
types ``generation``, ``serve`` and ``observation``; ``load_session``
rebuilds the in-memory state from that file, so a crashed server can be
restarted without losing anything already written.
"""

from __future__ import annotations

import enum
import fcntl
import hashlib
import itertools
import json
import logging
import random
import string
import threading
import time
from dataclasses import dataclass, field
from functools import lru_cache
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from importlib import resources
from pathlib import Path
from typing import Any, Optional

from .manifest import RawManifest, normalize, parse_manifest
from .urls import resolve

log = logging.getLogger(__name__)

MALFORMED_OPERATOR = "malformed_json"
OVERSIZE_LENGTHS = (1000, 1001, 5000)
CROSS_ORIGIN_URL = "https://attack.example/"
REDIRECT_QUERY = "?redirect=attack.example"
RELATIVE_URLS = ("./", "app/index.html")
PARENT_URLS = ("../", "../../")
DEFAULT_INTERVAL = 60


class Operator(str, enum.Enum):
    ENUMERATE = "a_documented_value"
    UNDOCUMENTED = "b_undocumented_value"
    UNKNOWN_FIELD = "c_unknown_field"
    REMOVE = "d_remove_field"
    EMPTY = "e_empty_value"
    OVERSIZE = "f_oversize_text"
    SCRIPT = "g_script_payload"
    RELATIVE = "h_relative_url"
    PARENT = "i_parent_path_url"
    CROSS_ORIGIN = "j_cross_origin_url"
    REDIRECT = "k_redirect_param"


class Outcome(str, enum.Enum):
    INSTALLED = "installed"
    NOT_INSTALLABLE = "not_installable"
    FIELD_IGNORED = "field_ignored"
    PROMPT_ANOMALY = "prompt_anomaly"
    DELAYED_UPDATE = "delayed_update"
    OTHER = "other"


class UnknownMutant(KeyError):
    pass


class BindFailure(OSError):
    pass


# -- schema -----------------------------------------------------------------

@dataclass(frozen=True)
class FieldSpec:
    name: str
    value_kind: str
    documented_values: tuple = ()
    constraints: tuple = ()


@dataclass(frozen=True)
class FieldSchema:
    fields: tuple[FieldSpec, ...]

    def __post_init__(self):
        names = [f.name for f in self.fields]
        if len(names) != len(set(names)):
            raise ValueError("schema lists a field more than once")

    def get(self, name: str) -> FieldSpec:
        for f in self.fields:
            if f.name == name:
                return f
        raise KeyError(name)

    @classmethod
    def from_dict(cls, doc: dict) -> "FieldSchema":
        return cls(tuple(
            FieldSpec(name, spec["value_kind"], tuple(spec.get("documented_values", ())),
                      tuple(spec.get("constraints", ())))
            for name, spec in doc["fields"].items()
        ))


def _data(name: str) -> dict:
    return json.loads(resources.files("pwa_audit.data").joinpath(name).read_text(encoding="utf-8"))


@lru_cache(maxsize=1)
def default_schema() -> FieldSchema:
    return FieldSchema.from_dict(_data("manifest_schema.json"))


@lru_cache(maxsize=1)
def script_payloads() -> tuple[str, ...]:
    return tuple(_data("xss_payloads.json")["payloads"])


# -- mutants ----------------------------------------------------------------

@dataclass(frozen=True)
class Mutation:
    operator: str
    field: str
    value: Any = None
    removed: bool = False

    def to_dict(self) -> dict:
        d = {"operator": self.operator, "field": self.field}
        if self.removed:
            d["removed"] = True
        else:
            d["value"] = self.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Mutation":
        return cls(d["operator"], d["field"], d.get("value"), d.get("removed", False))


@dataclass(frozen=True)
class Mutant:
    mutant_id: str
    mutations: tuple[Mutation, ...]
    rendered: str

    @property
    def operator(self) -> str:
        return "+".join(m.operator for m in self.mutations)

    @property
    def malformed(self) -> bool:
        return any(m.operator == MALFORMED_OPERATOR for m in self.mutations)

    @property
    def mutated_fields(self) -> dict:
        return {m.field: m.value for m in self.mutations if not m.removed and m.field != "$"}

    @property
    def removed_fields(self) -> tuple[str, ...]:
        return tuple(m.field for m in self.mutations if m.removed)

    def to_dict(self) -> dict:
        return {"mutant_id": self.mutant_id, "operator": self.operator,
                "mutations": [m.to_dict() for m in self.mutations], "rendered": self.rendered}

    @classmethod
    def from_dict(cls, d: dict) -> "Mutant":
        return cls(d["mutant_id"], tuple(Mutation.from_dict(m) for m in d["mutations"]), d["rendered"])


def _canonical(value) -> str:
    return json.dumps(value, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def _mutant_id(base_fields: dict, mutations: tuple[Mutation, ...]) -> str:
    digest = hashlib.sha256(_canonical([base_fields, [m.to_dict() for m in mutations]]).encode("utf-8"))
    return digest.hexdigest()[:16]


def _render(base_fields: dict, mutations: tuple[Mutation, ...]) -> str:
    if any(m.operator == MALFORMED_OPERATOR for m in mutations):
        # drop the closing brace: the one intentionally unparsable body
        return json.dumps(base_fields, ensure_ascii=False, indent=2)[:-1].rstrip() + ",\n"
    fields = dict(base_fields)
    for m in mutations:
        if m.removed:
            fields.pop(m.field, None)
        else:
            fields[m.field] = m.value
    return json.dumps(fields, ensure_ascii=False, indent=2) + "\n"


def _make(base_fields: dict, mutations: tuple[Mutation, ...]) -> Mutant:
    return Mutant(_mutant_id(base_fields, mutations), mutations, _render(base_fields, mutations))


_UNDOCUMENTED = {
    "display": ("kiosk", "tabbed", "window-controls-overlay", "picture-in-picture", "immersive"),
}


def _undocumented_value(spec: FieldSpec, rng: random.Random):
    if spec.value_kind == "boolean":
        return rng.choice(["true", "yes", 1])
    choices = [v for v in _UNDOCUMENTED.get(spec.name, ("undocumented",)) if v not in spec.documented_values]
    return rng.choice(choices)


def _oversize(length: int, rng: random.Random) -> str:
    return "".join(rng.choices(string.ascii_letters + " ", k=length - 1)) + "X"


def _empty(kind: str):
    return {"text": "", "url": "", "url_list": [], "object_list": []}.get(kind)


def _url_with_redirect(base_fields: dict, name: str) -> str:
    current = base_fields.get(name)
    if not isinstance(current, str) or not current.strip():
        current = "/"
    current = current.split("#", 1)[0]
    return current + ("&" + REDIRECT_QUERY[1:] if "?" in current else REDIRECT_QUERY)


def _single_mutations(base_fields: dict, schema: FieldSchema, rng: random.Random) -> list[Mutation]:
    out: list[Mutation] = []
    for spec in schema.fields:
        name, kind = spec.name, spec.value_kind
        for value in spec.documented_values:
            out.append(Mutation(Operator.ENUMERATE.value, name, value))
        if spec.documented_values:
            out.append(Mutation(Operator.UNDOCUMENTED.value, name, _undocumented_value(spec, rng)))
        if name in base_fields:
            out.append(Mutation(Operator.REMOVE.value, name, removed=True))
        empty = _empty(kind)
        if empty is not None:
            out.append(Mutation(Operator.EMPTY.value, name, empty))
        if kind == "text" and not spec.documented_values:
            for length in OVERSIZE_LENGTHS:
                out.append(Mutation(Operator.OVERSIZE.value, name, _oversize(length, rng)))
            for payload in script_payloads():
                out.append(Mutation(Operator.SCRIPT.value, name, payload))
        if kind == "url":
            for ref in RELATIVE_URLS:
                out.append(Mutation(Operator.RELATIVE.value, name, ref))
            for ref in PARENT_URLS:
                out.append(Mutation(Operator.PARENT.value, name, ref))
            out.append(Mutation(Operator.CROSS_ORIGIN.value, name, CROSS_ORIGIN_URL))
            out.append(Mutation(Operator.REDIRECT.value, name, _url_with_redirect(base_fields, name)))
        if kind == "url_list":
            icon = {"src": CROSS_ORIGIN_URL + "icon.png", "sizes": "192x192", "type": "image/png"}
            out.append(Mutation(Operator.CROSS_ORIGIN.value, name, [icon]))
            out.append(Mutation(Operator.PARENT.value, name,
                                [dict(icon, src="../icon.png")]))
        if kind == "object_list":
            app = {"platform": "play", "url": "https://play.google.com/store/apps/details?id=example.attack",
                   "id": "example.attack"}
            out.append(Mutation(Operator.CROSS_ORIGIN.value, name, [app]))
    token = "".join(rng.choices(string.ascii_lowercase, k=8))
    out.append(Mutation(Operator.UNKNOWN_FIELD.value, f"x_{token}", f"tracking-{token}"))
    return out


def generate_mutants(base: RawManifest, schema: Optional[FieldSchema] = None, seed: int = 0,
                     pairs: bool = False, max_pairs: int = 200) -> list[Mutant]:
    """Apply every operator to every applicable field, one mutation per mutant.

    With ``pairs`` a seeded sample of two-operator compositions on distinct
    fields is appended.  The last mutant is always the designated
    malformed-JSON one.
    """
    schema = schema or default_schema()
    normalize(base)  # pre: base normalizes
    base_fields = dict(base.fields)
    rng = random.Random(seed)
    singles = _single_mutations(base_fields, schema, rng)
    mutants = [_make(base_fields, (m,)) for m in singles]
    if pairs:
        combos = [(a, b) for a, b in itertools.combinations(singles, 2) if a.field != b.field]
        if len(combos) > max_pairs:
            combos = [combos[i] for i in sorted(rng.sample(range(len(combos)), max_pairs))]
        mutants.extend(_make(base_fields, combo) for combo in combos)
    mutants.append(_make(base_fields, (Mutation(MALFORMED_OPERATOR, "$"),)))
    seen: set[str] = set()
    unique = []
    for m in mutants:
        if m.mutant_id not in seen:
            seen.add(m.mutant_id)
            unique.append(m)
    return unique


# -- session ----------------------------------------------------------------

@dataclass
class FuzzSession:
    session_id: str
    seed: int
    mutants: list[Mutant]
    interval_seconds: int = DEFAULT_INTERVAL
    serve_log: list[tuple[float, str]] = field(default_factory=list)
    observations: list[tuple[float, str, Outcome, str]] = field(default_factory=list)
    path: Optional[Path] = None
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def __post_init__(self):
        self._ids = {m.mutant_id: m for m in self.mutants}

    def mutant(self, mutant_id: str) -> Mutant:
        try:
            return self._ids[mutant_id]
        except KeyError:
            raise UnknownMutant(mutant_id) from None

    def _append_event(self, kind: str, timestamp: float, payload: dict) -> None:
        if self.path is None:
            return
        line = json.dumps({"type": kind, "timestamp": timestamp, "payload": payload}, ensure_ascii=False)
        with open(self.path, "a", encoding="utf-8") as fh:
            # other processes (``fuzz record``) may append to the same file
            fcntl.flock(fh, fcntl.LOCK_EX)
            try:
                fh.write(line + "\n")
                fh.flush()
            finally:
                fcntl.flock(fh, fcntl.LOCK_UN)

    def log_serve(self, mutant_id: str, timestamp: Optional[float] = None) -> float:
        with self._lock:
            ts = time.time() if timestamp is None else timestamp
            if self.serve_log and ts < self.serve_log[-1][0]:
                ts = self.serve_log[-1][0]
            self.serve_log.append((ts, mutant_id))
            self._append_event("serve", ts, {"mutant_id": mutant_id})
        return ts


def new_session(base: RawManifest, seed: int = 0, interval_seconds: int = DEFAULT_INTERVAL,
                path: Optional[str | Path] = None, schema: Optional[FieldSchema] = None,
                pairs: bool = False, session_id: Optional[str] = None) -> FuzzSession:
    mutants = generate_mutants(base, schema, seed, pairs=pairs)
    if session_id is None:
        session_id = hashlib.sha256(
            _canonical([dict(base.fields), seed, [m.mutant_id for m in mutants]]).encode("utf-8")
        ).hexdigest()[:12]
    session = FuzzSession(session_id, seed, mutants, interval_seconds,
                          path=Path(path) if path is not None else None)
    if session.path is not None:
        session.path.write_text("", encoding="utf-8")
        session._append_event("generation", time.time(), {
            "session_id": session_id,
            "seed": seed,
            "interval_seconds": interval_seconds,
            "base": {"fields": dict(base.fields), "source_url": str(base.source_url),
                     "document_url": str(base.document_url)},
            "mutants": [m.to_dict() for m in mutants],
        })
    return session


def load_session(path: str | Path) -> FuzzSession:
    path = Path(path)
    session = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                event = json.loads(line)
            except json.JSONDecodeError:
                # a torn final line from a crash; everything before it is intact
                log.warning("%s:%d: unreadable event skipped", path, lineno)
                continue
            kind, ts, payload = event["type"], event["timestamp"], event["payload"]
            if kind == "generation":
                session = FuzzSession(payload["session_id"], payload["seed"],
                                      [Mutant.from_dict(m) for m in payload["mutants"]],
                                      payload["interval_seconds"], path=path)
            elif session is None:
                raise ValueError(f"{path}: events before the generation record")
            elif kind == "serve":
                session.serve_log.append((ts, payload["mutant_id"]))
            elif kind == "observation":
                session.observations.append((ts, payload["mutant_id"], Outcome(payload["outcome"]),
                                             payload.get("note", "")))
    if session is None:
        raise ValueError(f"{path}: no generation record")
    return session


def record_observation(session: FuzzSession, mutant_id: str, outcome: Outcome | str,
                       note: str = "") -> FuzzSession:
    session.mutant(mutant_id)
    outcome = Outcome(outcome)
    with session._lock:
        ts = time.time()
        session.observations.append((ts, mutant_id, outcome, note))
        session._append_event("observation", ts, {"mutant_id": mutant_id, "outcome": outcome.value,
                                                  "note": note})
    return session


def session_report(session: FuzzSession) -> list[dict]:
    serves: dict[str, int] = {}
    for _, mid in session.serve_log:
        serves[mid] = serves.get(mid, 0) + 1
    grouped: dict[str, dict[str, int]] = {}
    for _, mid, outcome, _ in session.observations:
        bucket = grouped.setdefault(mid, {})
        bucket[outcome.value] = bucket.get(outcome.value, 0) + 1
    report = []
    for m in session.mutants:
        outcomes = grouped.get(m.mutant_id, {})
        report.append({
            "mutant_id": m.mutant_id,
            "operator": m.operator,
            "serve_count": serves.get(m.mutant_id, 0),
            "outcomes": {o.value: outcomes[o.value] for o in Outcome if o.value in outcomes},
            "unobserved": not outcomes,
        })
    return report


# -- serving ----------------------------------------------------------------

SHELL_PAGE = """<!doctype html>
<html>
<head>
<meta charset="utf-8">
<title>manifest fuzz harness</title>
<link rel="manifest" href="/manifest.json">
</head>
<body>
<p>Install this page as an app, then record what happened.</p>
</body>
</html>
"""


class FuzzServer:
    """Serve ``session`` on ``host:port`` and rotate mutants every interval.

    The rotation thread is the only writer of the current position; request
    handlers read it under the same lock.
    """

    def __init__(self, session: FuzzSession, host: str = "127.0.0.1", port: int = 0):
        if not session.mutants:
            raise ValueError("session has no mutants")
        self.session = session
        self._index = 0
        self._state_lock = threading.Lock()
        self._stop = threading.Event()
        self.advances: list[tuple[float, int]] = []  # (monotonic time, new index)
        try:
            self.httpd = ThreadingHTTPServer((host, port), self._handler_class())
        except OSError as exc:
            raise BindFailure(f"cannot bind {host}:{port}: {exc}") from exc
        self.httpd.daemon_threads = True
        self._threads: list[threading.Thread] = []

    @property
    def address(self) -> tuple[str, int]:
        return self.httpd.server_address[:2]

    @property
    def url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}/"

    def current(self) -> tuple[int, Mutant]:
        with self._state_lock:
            i = self._index
        return i, self.session.mutants[i]

    def _rotate(self) -> None:
        interval = self.session.interval_seconds
        last = time.monotonic()
        while True:
            # Event.wait may return early on some platforms; never advance sooner than interval
            remaining = interval - (time.monotonic() - last)
            if remaining > 0:
                if self._stop.wait(remaining):
                    return
                continue
            last = time.monotonic()
            with self._state_lock:
                self._index = (self._index + 1) % len(self.session.mutants)
                self.advances.append((last, self._index))

    def _handler_class(self):
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, fmt, *args):
                log.debug("fuzz server: " + fmt, *args)

            def _send(self, status: int, body: str, ctype: str):
                data = body.encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", ctype)
                self.send_header("Content-Length", str(len(data)))
                self.send_header("Cache-Control", "no-store")
                self.end_headers()
                self.wfile.write(data)

            def do_GET(self):
                path = self.path.split("?", 1)[0]
                if path in ("/", "/index.html"):
                    self._send(200, SHELL_PAGE, "text/html; charset=utf-8")
                elif path == "/manifest.json":
                    # read and log under one lock so the log matches what was sent
                    with server._state_lock:
                        mutant = server.session.mutants[server._index]
                        server.session.log_serve(mutant.mutant_id)
                    self._send(200, mutant.rendered, "application/manifest+json; charset=utf-8")
                elif path == "/status":
                    index, mutant = server.current()
                    body = json.dumps({"mutant_id": mutant.mutant_id, "index": index,
                                       "total": len(server.session.mutants)})
                    self._send(200, body, "application/json")
                else:
                    self._send(404, "not found\n", "text/plain")

        return Handler

    def start(self) -> "FuzzServer":
        for target in (self.httpd.serve_forever, self._rotate):
            t = threading.Thread(target=target, daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def stop(self) -> None:
        self._stop.set()
        self.httpd.shutdown()
        self.httpd.server_close()
        for t in self._threads:
            t.join(timeout=5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def serve_session(session: FuzzSession, bind_address: str = "127.0.0.1:8000") -> None:
    """Serve until interrupted."""
    host, _, port = bind_address.rpartition(":")
    if not port.isdigit():
        raise ValueError(f"bind address must be host:port, got {bind_address!r}")
    server = FuzzServer(session, host or "127.0.0.1", int(port))
    server.start()
    try:
        while not server._stop.wait(1.0):
            pass
    finally:
        server.stop()


def parse_base(text: str | bytes, document_url: str = "http://127.0.0.1/") -> RawManifest:
    """Parse a base manifest as if served at ``/manifest.json`` next to ``document_url``."""
    return parse_manifest(text, resolve(document_url, "/manifest.json"), document_url)
