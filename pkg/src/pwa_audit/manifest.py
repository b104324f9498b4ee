"""Web App Manifest parsing and normalization.

``parse_manifest`` keeps the raw top-level field map in input order
(unknown keys included); ``normalize`` turns it into a typed ``Manifest``
with resolved URLs, recorded fallbacks and parse notes.
"""

from __future__ import annotations

import enum
import json
import unicodedata
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

from .urls import (
    AbsoluteUrl,
    UnresolvableReference,
    UrlLike,
    as_url,
    resolve,
    same_origin,
    within_scope,
)

STANDARD_FIELDS = (
    "name",
    "short_name",
    "description",
    "icons",
    "start_url",
    "scope",
    "display",
    "display_override",
    "id",
    "theme_color",
    "background_color",
    "orientation",
    "lang",
    "dir",
    "categories",
    "screenshots",
    "shortcuts",
    "related_applications",
    "prefer_related_applications",
    "protocol_handlers",
    "share_target",
)
_STANDARD = frozenset(STANDARD_FIELDS)

_TEXT_FIELDS = ("name", "short_name", "id", "theme_color", "start_url", "scope", "display")


class MalformedJson(ValueError):
    """The manifest body is not a JSON object."""


class DisplayMode(str, enum.Enum):
    BROWSER = "browser"
    MINIMAL_UI = "minimal-ui"
    STANDALONE = "standalone"
    FULLSCREEN = "fullscreen"
    UNKNOWN = "unknown"


DOCUMENTED_DISPLAY = ("fullscreen", "standalone", "minimal-ui", "browser")


@dataclass(frozen=True)
class RawManifest:
    fields: Mapping[str, Any]
    source_url: AbsoluteUrl
    document_url: AbsoluteUrl
    notes: tuple[str, ...] = field(default=(), compare=False)

    def keys(self) -> list[str]:
        return list(self.fields)


@dataclass(frozen=True)
class IconEntry:
    src: AbsoluteUrl
    src_raw: str = field(compare=False)
    sizes: Optional[str] = None
    type: Optional[str] = None
    # position in the raw icons list, used for field paths
    index: int = field(default=0, compare=False)


@dataclass(frozen=True)
class RelatedApplication:
    platform: str
    url: Optional[AbsoluteUrl] = None
    id: Optional[str] = None


@dataclass(frozen=True)
class Manifest:
    """Normalized manifest.

    Fields that only record how a value was written (``*_raw``, fallback
    flags, notes) are excluded from equality so that normalizing the
    re-serialized form compares equal to the original.
    """

    document_url: AbsoluteUrl
    source_url: AbsoluteUrl
    start_url: AbsoluteUrl
    scope: AbsoluteUrl
    display: DisplayMode
    name: Optional[str] = None
    short_name: Optional[str] = None
    id: Optional[str] = None
    display_raw: Optional[str] = None
    theme_color: Optional[str] = None
    icons: tuple[IconEntry, ...] = ()
    related_applications: tuple[RelatedApplication, ...] = ()
    prefer_related_applications: Optional[bool] = None
    unknown_fields: tuple[str, ...] = ()
    start_url_raw: Optional[str] = field(default=None, compare=False)
    start_url_fell_back: bool = field(default=False, compare=False)
    scope_raw: Optional[str] = field(default=None, compare=False)
    scope_fell_back: bool = field(default=False, compare=False)
    notes: tuple[str, ...] = field(default=(), compare=False)


def normalize_name(name: Optional[str]) -> str:
    """Comparison key for duplicate-name detection: trim, NFC, casefold."""
    if name is None:
        return ""
    return unicodedata.normalize("NFC", name.strip()).casefold()


def parse_manifest(text: str | bytes, source_url: UrlLike, document_url: UrlLike) -> RawManifest:
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedJson(f"manifest is not UTF-8: {exc}") from None
    text = text.lstrip("\ufeff")
    notes: list[str] = []

    def pairs_hook(pairs):
        out: dict[str, Any] = {}
        for k, v in pairs:
            if k in out:
                notes.append(f"duplicate key {k!r}: last occurrence wins")
                del out[k]
            out[k] = v
        return out

    def reject_constant(name):
        raise MalformedJson(f"non-standard JSON constant {name}")

    try:
        value = json.loads(text, object_pairs_hook=pairs_hook, parse_constant=reject_constant)
    except json.JSONDecodeError as exc:
        raise MalformedJson(f"invalid JSON: {exc}") from None
    if not isinstance(value, dict):
        raise MalformedJson(f"top-level JSON value is {type(value).__name__}, not an object")
    return RawManifest(value, as_url(source_url), as_url(document_url), tuple(notes))


def serialize(raw: RawManifest) -> str:
    return json.dumps(dict(raw.fields), ensure_ascii=False)


def _text(fields: Mapping[str, Any], key: str, notes: list[str]) -> Optional[str]:
    if key not in fields or fields[key] is None:
        return None
    value = fields[key]
    if isinstance(value, str):
        return value
    rendered = json.dumps(value, ensure_ascii=False)
    notes.append(f"{key}: non-text value {rendered[:60]} coerced to text")
    return rendered


def _display(text: Optional[str]) -> DisplayMode:
    if text is None:
        return DisplayMode.BROWSER
    for mode in DisplayMode:
        if mode is not DisplayMode.UNKNOWN and mode.value == text:
            return mode
    return DisplayMode.UNKNOWN


def _icons(value: Any, base: AbsoluteUrl, notes: list[str]) -> tuple[IconEntry, ...]:
    if value is None:
        return ()
    if not isinstance(value, list):
        notes.append("icons: not a list; ignored")
        return ()
    out = []
    for i, item in enumerate(value):
        if not isinstance(item, dict) or not isinstance(item.get("src"), str):
            notes.append(f"icons[{i}]: missing src; dropped")
            continue
        try:
            src = resolve(base, item["src"])
        except UnresolvableReference as exc:
            notes.append(f"icons[{i}].src: {exc}; dropped")
            continue
        sizes = item.get("sizes")
        typ = item.get("type")
        out.append(IconEntry(src, item["src"],
                             sizes if isinstance(sizes, str) else None,
                             typ if isinstance(typ, str) else None, i))
    return tuple(out)


def _related(value: Any, base: AbsoluteUrl, notes: list[str]) -> tuple[RelatedApplication, ...]:
    if value is None:
        return ()
    if not isinstance(value, list):
        notes.append("related_applications: not a list; ignored")
        return ()
    out = []
    for i, item in enumerate(value):
        if not isinstance(item, dict):
            notes.append(f"related_applications[{i}]: not an object; dropped")
            continue
        platform = item.get("platform")
        url = None
        if isinstance(item.get("url"), str):
            try:
                url = resolve(base, item["url"])
            except UnresolvableReference as exc:
                notes.append(f"related_applications[{i}].url: {exc}")
        app_id = item.get("id") if isinstance(item.get("id"), str) else None
        if url is None and app_id is None:
            notes.append(f"related_applications[{i}]: neither url nor id; dropped")
            continue
        out.append(RelatedApplication(platform if isinstance(platform, str) else "", url, app_id))
    return tuple(out)


def normalize(raw: RawManifest) -> Manifest:
    fields = raw.fields
    doc = raw.document_url
    notes = list(raw.notes)
    if any(not c.isascii() for c in doc.host):
        notes.append(f"document host {doc.host!r} is non-ASCII; compared as given")

    texts = {k: _text(fields, k, notes) for k in _TEXT_FIELDS}

    start_raw = texts["start_url"]
    start, fell_back = doc, True
    if start_raw is None or not start_raw.strip():
        if start_raw is not None:
            notes.append("start_url is empty; using the document URL")
    else:
        try:
            candidate = resolve(doc, start_raw)
        except UnresolvableReference as exc:
            notes.append(f"start_url: {exc}; using the document URL")
        else:
            if same_origin(candidate, doc):
                start, fell_back = candidate, False
            else:
                notes.append(f"start_url {candidate} is cross-origin; using the document URL")

    default_scope = start.directory()
    scope_raw = texts["scope"]
    scope, scope_fell_back = default_scope, scope_raw is not None
    if scope_raw is not None and scope_raw.strip():
        try:
            candidate = resolve(doc, scope_raw).without_query()
        except UnresolvableReference as exc:
            notes.append(f"scope: {exc}; using the default scope")
        else:
            if not same_origin(candidate, doc):
                notes.append(f"scope {candidate} is cross-origin; using the default scope")
            elif not within_scope(start, candidate):
                notes.append(f"start_url is outside scope {candidate}; using the default scope")
            else:
                scope, scope_fell_back = candidate, False
    elif scope_raw is not None:
        notes.append("scope is empty; using the default scope")

    prefer = fields.get("prefer_related_applications")
    if prefer is not None and not isinstance(prefer, bool):
        notes.append("prefer_related_applications: not a boolean; ignored")
        prefer = None

    return Manifest(
        document_url=doc,
        source_url=raw.source_url,
        start_url=start,
        scope=scope,
        display=_display(texts["display"]),
        name=texts["name"],
        short_name=texts["short_name"],
        id=texts["id"],
        display_raw=texts["display"],
        theme_color=texts["theme_color"],
        icons=_icons(fields.get("icons"), raw.source_url, notes),
        related_applications=_related(fields.get("related_applications"), raw.source_url, notes),
        prefer_related_applications=prefer,
        unknown_fields=tuple(k for k in fields if k not in _STANDARD),
        start_url_raw=start_raw,
        start_url_fell_back=fell_back,
        scope_raw=scope_raw,
        scope_fell_back=scope_fell_back,
        notes=tuple(notes),
    )


def to_raw(manifest: Manifest, original: Optional[RawManifest] = None) -> RawManifest:
    """Re-serialize the normalized values as a raw field map.

    Unknown fields take their values from ``original`` when given, else null.
    """
    out: dict[str, Any] = {}
    for key in ("name", "short_name", "id", "theme_color"):
        value = getattr(manifest, key)
        if value is not None:
            out[key] = value
    out["start_url"] = str(manifest.start_url)
    out["scope"] = str(manifest.scope)
    if manifest.display_raw is not None:
        out["display"] = manifest.display_raw
    if manifest.icons:
        out["icons"] = [
            {k: v for k, v in (("src", str(i.src)), ("sizes", i.sizes), ("type", i.type)) if v is not None}
            for i in manifest.icons
        ]
    if manifest.related_applications:
        out["related_applications"] = [
            {k: v for k, v in (("platform", a.platform), ("url", str(a.url) if a.url else None), ("id", a.id))
             if v is not None}
            for a in manifest.related_applications
        ]
    if manifest.prefer_related_applications is not None:
        out["prefer_related_applications"] = manifest.prefer_related_applications
    for key in manifest.unknown_fields:
        out[key] = original.fields.get(key) if original is not None else None
    return RawManifest(out, manifest.source_url, manifest.document_url)


def load_manifest(text: str | bytes, source_url: UrlLike, document_url: UrlLike) -> tuple[RawManifest, Manifest]:
    raw = parse_manifest(text, source_url, document_url)
    return raw, normalize(raw)
