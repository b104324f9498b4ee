"""Lexical service-worker cache-strategy classifier.

The script is never parsed or executed.  Comments are blanked out (offsets
and newlines preserved) and string/regex contents are masked, then the
``fetch`` handlers and Workbox strategy constructors are matched with
whitespace-tolerant patterns.  Minified sources work the same way since
nothing depends on line structure.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Optional

from .lint import Finding, make_finding


class Strategy(str, enum.Enum):
    CACHE_FIRST = "cache_first"
    NETWORK_FIRST = "network_first"
    CACHE_ONLY = "cache_only"
    NETWORK_ONLY = "network_only"
    STALE_WHILE_REVALIDATE = "stale_while_revalidate"
    UNKNOWN = "unknown"


class Confidence(str, enum.Enum):
    PATTERN_MATCH = "pattern_match"
    HEURISTIC = "heuristic"
    UNKNOWN = "unknown"


# riskiest first; used when handlers disagree
RISK_ORDER = (
    Strategy.CACHE_ONLY,
    Strategy.NETWORK_ONLY,
    Strategy.CACHE_FIRST,
    Strategy.NETWORK_FIRST,
    Strategy.STALE_WHILE_REVALIDATE,
)


@dataclass(frozen=True)
class Evidence:
    pattern: str
    start_line: int
    end_line: int

    def to_dict(self) -> dict:
        return {"pattern": self.pattern, "lines": [self.start_line, self.end_line]}


@dataclass(frozen=True)
class SwClassification:
    strategy: Strategy
    confidence: Confidence
    evidence: tuple[Evidence, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy.value,
            "confidence": self.confidence.value,
            "evidence": [e.to_dict() for e in self.evidence],
        }


# -- lexing -----------------------------------------------------------------

_REGEX_PREFIX = set("(,=:[!&|?{};+-*%<>~^")


def mask_source(source: str) -> tuple[str, str]:
    """Return (code, masked) views of ``source`` with identical offsets.

    ``code`` has comments replaced by spaces; ``masked`` additionally
    replaces string, template and regex literal contents by spaces (quotes
    kept) so that identifiers inside literals cannot match.
    """
    code = list(source)
    masked = list(source)
    n = len(source)
    i = 0
    last_sig = ""

    def blank(buf, a, b):
        for k in range(a, b):
            if buf[k] != "\n":
                buf[k] = " "

    while i < n:
        c = source[i]
        nxt = source[i + 1] if i + 1 < n else ""
        if c == "/" and nxt == "/":
            j = source.find("\n", i)
            j = n if j < 0 else j
            blank(code, i, j)
            blank(masked, i, j)
            i = j
            continue
        if c == "/" and nxt == "*":
            j = source.find("*/", i + 2)
            j = n if j < 0 else j + 2
            blank(code, i, j)
            blank(masked, i, j)
            i = j
            continue
        if c in "'\"`":
            j = i + 1
            while j < n and source[j] != c:
                if source[j] == "\\":
                    j += 1
                elif c != "`" and source[j] == "\n":
                    break
                j += 1
            blank(masked, i + 1, min(j, n))
            i = j + 1
            last_sig = c
            continue
        if c == "/" and (last_sig == "" or last_sig in _REGEX_PREFIX):
            j = i + 1
            in_class = False
            while j < n and source[j] != "\n":
                ch = source[j]
                if ch == "\\":
                    j += 2
                    continue
                if ch == "[":
                    in_class = True
                elif ch == "]":
                    in_class = False
                elif ch == "/" and not in_class:
                    break
                j += 1
            if j < n and source[j] == "/":
                blank(masked, i + 1, j)
                i = j + 1
                last_sig = "/"
                continue
        if not c.isspace():
            last_sig = c
        i += 1
    return "".join(code), "".join(masked)


def _match_close(text: str, open_pos: int) -> int:
    """Index of the bracket closing the one at ``open_pos`` (masked text)."""
    pairs = {"(": ")", "{": "}", "[": "]"}
    stack = [pairs[text[open_pos]]]
    for k in range(open_pos + 1, len(text)):
        ch = text[k]
        if ch in pairs:
            stack.append(pairs[ch])
        elif ch in ")}]":
            if not stack or ch != stack[-1]:
                return len(text)
            stack.pop()
            if not stack:
                return k
    return len(text)


# -- patterns ---------------------------------------------------------------

_WS = r"\s*"
_FETCH_LISTENER = re.compile(r"\baddEventListener\s*\(\s*(['\"`])fetch\1\s*,")
_ONFETCH = re.compile(r"\bonfetch\s*=(?!=)")
_RESPOND_WITH = re.compile(r"\brespondWith\s*\(")
_CACHE_READ = re.compile(r"\b(?:caches|\w*[cC]ache\w*)\s*\.\s*match(?:All)?\s*\(")
_NETWORK = re.compile(r"(?<![\w$.])(?:(?:self|window|globalThis)\s*\.\s*)?fetch\s*\(")
_CACHE_WRITE = re.compile(r"\.\s*(?:put|add|addAll)\s*\(")
_CATCH = re.compile(r"(?:\.\s*catch\s*\(|\bcatch\s*[({])")
_FALLBACK_FETCH = re.compile(r"(?:\|\||\?\?|\breturn|:|=>)\s*(?:(?:self|window|globalThis)\s*\.\s*)?fetch\s*\(")
_ASSIGNED_FETCH = re.compile(r"\b(?:const|let|var)\s+[\w$]+\s*=\s*(?:(?:self|window|globalThis)\s*\.\s*)?fetch\s*\(")
_WAIT_UNTIL = re.compile(r"\bwaitUntil\s*\(")
_WORKBOX = re.compile(
    r"\b(?:strategies\s*\.\s*)?(CacheFirst|NetworkFirst|CacheOnly|NetworkOnly|StaleWhileRevalidate)\s*\("
)
_WORKBOX_STRATEGY = {
    "CacheFirst": Strategy.CACHE_FIRST,
    "NetworkFirst": Strategy.NETWORK_FIRST,
    "CacheOnly": Strategy.CACHE_ONLY,
    "NetworkOnly": Strategy.NETWORK_ONLY,
    "StaleWhileRevalidate": Strategy.STALE_WHILE_REVALIDATE,
}


def _line(text: str, pos: int) -> int:
    return text.count("\n", 0, pos) + 1


def _handler_spans(code: str, masked: str) -> list[tuple[int, int]]:
    spans = []
    for m in _FETCH_LISTENER.finditer(code):
        open_pos = code.rfind("(", m.start(), m.end())
        spans.append((m.start(), _match_close(masked, open_pos)))
    for m in _ONFETCH.finditer(masked):
        brace = masked.find("{", m.end())
        semi = masked.find(";", m.end())
        if brace >= 0 and (semi < 0 or brace < semi):
            spans.append((m.start(), _match_close(masked, brace)))
        else:
            spans.append((m.start(), semi if semi >= 0 else len(masked)))
    return spans


def _classify_body(masked: str, start: int, end: int) -> Optional[tuple[Strategy, str, bool]]:
    """Classify one fetch handler; returns (strategy, pattern name, certain)."""
    body = masked[start:end]
    rw = _RESPOND_WITH.search(body)
    if rw is None:
        return None
    reads = [m.start() for m in _CACHE_READ.finditer(body)]
    nets = [m.start() for m in _NETWORK.finditer(body)]
    if not reads and not nets:
        return None
    if reads and not nets:
        return Strategy.CACHE_ONLY, "cache-read-without-network", True
    if nets and not reads:
        return Strategy.NETWORK_ONLY, "network-without-cache", True

    rw_open = rw.end() - 1
    rw_close = _match_close(body, rw_open)
    inner = body[rw_open:rw_close]
    writes = bool(_CACHE_WRITE.search(body))
    first_read, first_net = min(reads), min(nets)

    if first_net < first_read:
        between = body[first_net:first_read]
        if _CATCH.search(between):
            return Strategy.NETWORK_FIRST, "network-then-cache-fallback", True
        return Strategy.NETWORK_FIRST, "network-before-cache", False

    # cache is consulted first
    background = _WAIT_UNTIL.search(body) and not _NETWORK.search(inner)
    if writes and (_ASSIGNED_FETCH.search(body) or background):
        return Strategy.STALE_WHILE_REVALIDATE, "cache-response-with-background-refresh", True
    if _FALLBACK_FETCH.search(body[first_read:]):
        return Strategy.CACHE_FIRST, "cache-then-network-fallback", True
    return Strategy.CACHE_FIRST, "cache-before-network", False


def classify_sw(source: str) -> SwClassification:
    code, masked = mask_source(source)
    found: list[tuple[Strategy, Evidence, bool]] = []
    for start, end in _handler_spans(code, masked):
        result = _classify_body(masked, start, end)
        if result is not None:
            strategy, pattern, certain = result
            found.append((strategy, Evidence(pattern, _line(source, start), _line(source, end)), certain))
    for m in _WORKBOX.finditer(masked):
        strategy = _WORKBOX_STRATEGY[m.group(1)]
        found.append((strategy, Evidence(f"workbox-{m.group(1)}", _line(source, m.start()),
                                         _line(source, m.end())), True))
    if not found:
        return SwClassification(Strategy.UNKNOWN, Confidence.UNKNOWN)
    strategies = {s for s, _, _ in found}
    if len(strategies) == 1:
        strategy = found[0][0]
        confidence = Confidence.PATTERN_MATCH if all(c for _, _, c in found) else Confidence.HEURISTIC
    else:
        strategy = next(s for s in RISK_ORDER if s in strategies)
        confidence = Confidence.HEURISTIC
    return SwClassification(strategy, confidence, tuple(e for _, e, _ in found))


def cache_only_risk(classification: SwClassification) -> Optional[Finding]:
    if classification.strategy is not Strategy.CACHE_ONLY:
        return None
    lines = ", ".join(f"{e.start_line}-{e.end_line}" for e in classification.evidence)
    return make_finding("SEC-SW-CACHEONLY", "service_worker",
                        f"fetch handler answers from the cache only (lines {lines}); updates never reach users")
