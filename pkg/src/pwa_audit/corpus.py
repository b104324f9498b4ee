"""Manifest corpus ingestion, duplicate indexes and field statistics.

Two source layouts are accepted:

* ``jsonl``: one object per line, ``{"url": <document url>, "manifest": <object or text>}``
  with an optional ``"manifest_url"``;
* ``directory``: ``*.webmanifest`` / ``*.json`` files whose stem is the
  percent-encoded document URL (``urllib.parse.quote(url, safe="")``).

Ingestion never fails on bad entries; they are counted in
``malformed_count``.  Entries sharing a document URL are collapsed to one,
chosen independently of input order.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional
from urllib.parse import unquote

from .manifest import (
    DOCUMENTED_DISPLAY,
    MalformedJson,
    Manifest,
    RawManifest,
    normalize,
    normalize_name,
    parse_manifest,
)
from .urls import AbsoluteUrl, UnresolvableReference, has_authority, is_parent_path_ref, query_of, resolve

log = logging.getLogger(__name__)

FREQUENCY_FIELDS = ("name", "start_url_raw", "scope_raw", "id")


class SourceUnreadable(OSError):
    pass


@dataclass(frozen=True)
class CorpusEntry:
    document_url: AbsoluteUrl
    raw: RawManifest
    manifest: Manifest


@dataclass
class UrlFieldStats:
    present: int = 0
    non_empty: int = 0
    empty: int = 0
    with_query_params: int = 0
    cross_origin_https: int = 0
    parent_path: int = 0

    def add(self, value, document_url: AbsoluteUrl) -> None:
        self.present += 1
        if not isinstance(value, str):
            self.non_empty += 1
            return
        if not value.strip():
            self.empty += 1
            return
        self.non_empty += 1
        if query_of(value):
            self.with_query_params += 1
        if is_parent_path_ref(value):
            self.parent_path += 1
        if has_authority(value):
            try:
                target = resolve(document_url, value)
            except UnresolvableReference:
                return
            if target.scheme == "https" and target.origin != document_url.origin:
                self.cross_origin_https += 1


@dataclass
class FieldStats:
    start_url: UrlFieldStats = field(default_factory=UrlFieldStats)
    scope: UrlFieldStats = field(default_factory=UrlFieldStats)
    display_counts: dict = field(default_factory=dict)
    display_errors: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "start_url": vars(self.start_url).copy(),
            "scope": vars(self.scope).copy(),
            "display_counts": dict(sorted(self.display_counts.items())),
            "display_errors": dict(sorted(self.display_errors.items())),
        }


@dataclass
class CorpusIndex:
    entry_count: int = 0
    malformed_count: int = 0
    duplicate_count: int = 0
    empty_names: int = 0
    name_counts: dict = field(default_factory=dict)
    icon_origins: dict = field(default_factory=dict)
    id_counts_per_origin: dict = field(default_factory=dict)
    field_stats: FieldStats = field(default_factory=FieldStats)
    frequencies: dict = field(default_factory=dict)
    # document URLs behind each name / (origin, id) key, so lint can exclude itself
    name_docs: dict = field(default_factory=dict, repr=False)
    id_docs: dict = field(default_factory=dict, repr=False)

    def names_elsewhere(self, key: str, document_url: str) -> int:
        return len(self.name_docs.get(key, set()) - {document_url})

    def icon_origins_elsewhere(self, src: str, origin: str) -> set:
        return self.icon_origins.get(src, set()) - {origin}

    def ids_elsewhere(self, origin: str, app_id: str, document_url: str) -> int:
        return len(self.id_docs.get((origin, app_id), set()) - {document_url})

    def to_dict(self) -> dict:
        dup = duplicate_summary(self)
        return {
            "entry_count": self.entry_count,
            "malformed_count": self.malformed_count,
            "duplicate_count": self.duplicate_count,
            "duplicate_summary": dup,
            "field_stats": self.field_stats.to_dict(),
            "icon_collisions": len(icon_collisions(self)),
        }


def _display_key(value) -> str:
    return value if isinstance(value, str) else json.dumps(value)


def build_index(entries: Iterable[CorpusEntry], malformed: int = 0, duplicates: int = 0) -> CorpusIndex:
    index = CorpusIndex(malformed_count=malformed, duplicate_count=duplicates)
    freqs = {f: Counter() for f in FREQUENCY_FIELDS}
    for entry in sorted(entries, key=lambda e: str(e.document_url)):
        index.entry_count += 1
        doc = entry.document_url
        doc_key, origin = str(doc), str(doc.origin)
        fields, m = entry.raw.fields, entry.manifest

        if m.name is None or not m.name.strip():
            index.empty_names += 1
        else:
            key = normalize_name(m.name)
            index.name_counts[key] = index.name_counts.get(key, 0) + 1
            index.name_docs.setdefault(key, set()).add(doc_key)
        for icon in m.icons:
            index.icon_origins.setdefault(str(icon.src), set()).add(origin)
        if m.id is not None and m.id.strip():
            k = (origin, m.id.strip())
            index.id_counts_per_origin[k] = index.id_counts_per_origin.get(k, 0) + 1
            index.id_docs.setdefault(k, set()).add(doc_key)

        if "start_url" in fields:
            index.field_stats.start_url.add(fields["start_url"], doc)
        if "scope" in fields:
            index.field_stats.scope.add(fields["scope"], doc)
        if "display" in fields:
            d = _display_key(fields["display"])
            stats = index.field_stats
            stats.display_counts[d] = stats.display_counts.get(d, 0) + 1
            if d not in DOCUMENTED_DISPLAY:
                stats.display_errors[d] = stats.display_errors.get(d, 0) + 1

        for fname, value in (("name", m.name), ("start_url_raw", m.start_url_raw),
                             ("scope_raw", m.scope_raw), ("id", m.id)):
            if value is not None:
                freqs[fname][value] += 1
    index.frequencies = {f: dict(c) for f, c in freqs.items()}
    return index


def make_entry(document_url: str, manifest, manifest_url: Optional[str] = None) -> CorpusEntry:
    """Build an entry from a document URL and a manifest object or text.

    Raises UnresolvableReference or MalformedJson for unusable input.
    """
    doc = AbsoluteUrl.parse(document_url)
    text = manifest if isinstance(manifest, (str, bytes)) else json.dumps(manifest, ensure_ascii=False)
    raw = parse_manifest(text, manifest_url or doc, doc)
    return CorpusEntry(doc, raw, normalize(raw))


def _canonical(entry: CorpusEntry) -> str:
    return json.dumps(entry.raw.fields, sort_keys=True, ensure_ascii=False)


def collapse(entries: Iterable[CorpusEntry]) -> tuple[list[CorpusEntry], int]:
    """Keep one entry per document URL; returns (entries, dropped count).

    Among conflicting re-fetches the winner is the one with the greatest
    canonical JSON, so the result does not depend on input order.
    """
    best: dict[str, CorpusEntry] = {}
    dropped = 0
    for entry in entries:
        key = str(entry.document_url)
        if key in best:
            dropped += 1
            if _canonical(entry) <= _canonical(best[key]):
                continue
        best[key] = entry
    return list(best.values()), dropped


def _jsonl_entries(lines: Iterable[str]) -> tuple[list[CorpusEntry], int]:
    entries, malformed = [], 0
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict) or not isinstance(obj.get("url"), str) or "manifest" not in obj:
                raise MalformedJson("expected {url, manifest}")
            entries.append(make_entry(obj["url"], obj["manifest"], obj.get("manifest_url")))
        except (ValueError, TypeError) as exc:
            log.debug("line %d skipped: %s", lineno, exc)
            malformed += 1
    return entries, malformed


def _directory_entries(root: Path) -> tuple[list[CorpusEntry], int]:
    entries, malformed = [], 0
    for path in sorted(root.iterdir()):
        if path.suffix not in (".webmanifest", ".json") or not path.is_file():
            continue
        try:
            entries.append(make_entry(unquote(path.stem), path.read_bytes()))
        except (ValueError, OSError) as exc:
            log.debug("%s skipped: %s", path.name, exc)
            malformed += 1
    return entries, malformed


def ingest(source: str | os.PathLike, format: str = "jsonl") -> CorpusIndex:
    path = Path(source)
    try:
        if format == "jsonl":
            with open(path, encoding="utf-8", errors="replace") as fh:
                entries, malformed = _jsonl_entries(fh)
        elif format == "directory":
            if not path.is_dir():
                raise SourceUnreadable(f"{path} is not a directory")
            entries, malformed = _directory_entries(path)
        else:
            raise ValueError(f"unknown corpus format {format!r}")
    except OSError as exc:
        if isinstance(exc, SourceUnreadable):
            raise
        raise SourceUnreadable(f"cannot read corpus {path}: {exc}") from exc
    kept, dropped = collapse(entries)
    return build_index(kept, malformed, dropped)


def ingest_lines(lines: Iterable[str]) -> CorpusIndex:
    entries, malformed = _jsonl_entries(lines)
    kept, dropped = collapse(entries)
    return build_index(kept, malformed, dropped)


def duplicate_names(index: CorpusIndex) -> list[tuple[str, int]]:
    dups = [(name, n) for name, n in index.name_counts.items() if n >= 2]
    return sorted(dups, key=lambda t: (-t[1], t[0]))


def duplicate_summary(index: CorpusIndex) -> dict:
    dups = duplicate_names(index)
    return {
        "unique_duplicate_names": len(dups),
        "affected_entries": sum(n for _, n in dups),
        "empty_names": index.empty_names,
    }


def frequency_table(index: CorpusIndex, field_name: str) -> list[tuple[str, int]]:
    if field_name not in FREQUENCY_FIELDS:
        raise ValueError(f"field must be one of {FREQUENCY_FIELDS}")
    counts = index.frequencies.get(field_name, {})
    return sorted(counts.items(), key=lambda t: (-t[1], t[0]))


def icon_collisions(index: CorpusIndex) -> list[tuple[str, list[str]]]:
    return [(src, sorted(origins)) for src, origins in sorted(index.icon_origins.items()) if len(origins) >= 2]


def frequency_csv(rows: list[tuple[str, int]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["token", "count"])
    writer.writerows(rows)
    return buf.getvalue()
