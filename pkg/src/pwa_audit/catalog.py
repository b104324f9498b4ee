"""Queryable violation catalog: risk rows with CIA letters and browser
counts, per-browser/OS install and profile support, and uninstall guidance.

The data lives in ``data/catalog.json`` together with a SHA-256 of its
canonical form; a mismatch raises ``CatalogCorrupt`` at load time.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Iterable


class CatalogCorrupt(RuntimeError):
    pass


class UnknownCombination(LookupError):
    pass


class Browser(str, enum.Enum):
    SAFARI = "Safari"
    FIREFOX = "Firefox"
    CHROME = "Chrome"
    EDGE = "Edge"
    OPERA = "Opera"
    BRAVE = "Brave"
    SAMSUNG_INTERNET = "SamsungInternet"
    TOR_BROWSER = "TorBrowser"


class OperatingSystem(str, enum.Enum):
    LINUX = "Linux"
    MACOS = "macOS"
    WINDOWS = "Windows"
    IOS = "iOS"
    ANDROID = "Android"


@dataclass(frozen=True)
class ViolationRecord:
    risk_name: str
    cia: str
    browser_count: int
    phase: str
    notes: str = ""
    # per browser x OS applicability is not published; always empty
    applicability: tuple[str, ...] = ()


@dataclass(frozen=True)
class BrowserProfile:
    browser: Browser
    os: OperatingSystem
    platform: str
    install_support: str
    profile_support: str


@dataclass(frozen=True)
class CiaTally:
    c: int = 0
    i: int = 0
    a: int = 0

    @property
    def total(self) -> int:
        return self.c + self.i + self.a

    def as_dict(self) -> dict:
        return {"C": self.c, "I": self.i, "A": self.a, "total": self.total}


@dataclass(frozen=True)
class UninstallGuide:
    browser: Browser
    os: OperatingSystem
    steps: tuple[str, ...]
    fallback: str
    notes: tuple[str, ...] = field(default=())

    def render(self) -> str:
        lines = [f"{self.browser.value} on {self.os.value}:"]
        lines += [f"  {n}. {s}" for n, s in enumerate(self.steps, 1)]
        lines.append(f"  Fallback: {self.fallback}")
        return "\n".join(lines)


def _canonical(payload) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def verify_document(doc: dict) -> dict:
    payload = doc.get("payload")
    if payload is None or hashlib.sha256(_canonical(payload)).hexdigest() != doc.get("sha256"):
        raise CatalogCorrupt("catalog data failed its checksum")
    return payload


@lru_cache(maxsize=1)
def _payload() -> dict:
    text = resources.files("pwa_audit").joinpath("data/catalog.json").read_text(encoding="utf-8")
    return verify_document(json.loads(text))


def load_catalog() -> list[ViolationRecord]:
    rows = [
        ViolationRecord(r["risk_name"], r["cia"], r["browser_count"], r["phase"], r["notes"],
                        tuple(r["applicability"]))
        for r in _payload()["risks"]
    ]
    names = [r.risk_name for r in rows]
    if len(set(names)) != len(names) or any(r.browser_count < 1 or r.cia not in "CIA" for r in rows):
        raise CatalogCorrupt("catalog rows violate their invariants")
    return rows


def _key(name: str) -> str:
    return " ".join(name.replace("’", "'").casefold().split())


def find_record(risk_name: str, catalog: Iterable[ViolationRecord] | None = None) -> ViolationRecord:
    """Look up a row by name; apostrophe style, case and spacing are ignored."""
    wanted = _key(risk_name)
    for row in catalog if catalog is not None else load_catalog():
        if _key(row.risk_name) == wanted:
            return row
    raise KeyError(risk_name)


def cia_tally(catalog: Iterable[ViolationRecord]) -> CiaTally:
    sums = {"C": 0, "I": 0, "A": 0}
    for row in catalog:
        sums[row.cia] += row.browser_count
    return CiaTally(sums["C"], sums["I"], sums["A"])


def _coerce(browser, os) -> tuple[Browser, OperatingSystem]:
    try:
        b = browser if isinstance(browser, Browser) else Browser(_browser_alias(browser))
        o = os if isinstance(os, OperatingSystem) else OperatingSystem(_os_alias(os))
    except ValueError:
        raise UnknownCombination(f"unknown browser/OS pair: {browser}/{os}") from None
    return b, o


def _browser_alias(name: str) -> str:
    flat = name.replace(" ", "").replace("_", "").replace("-", "").lower()
    for b in Browser:
        if b.value.lower() == flat:
            return b.value
    return name


def _os_alias(name: str) -> str:
    for o in OperatingSystem:
        if o.value.lower() == name.lower():
            return o.value
    return name


def all_profiles() -> list[BrowserProfile]:
    return [
        BrowserProfile(Browser(p["browser"]), OperatingSystem(p["os"]), p["platform"],
                       p["install_support"], p["profile_support"])
        for p in _payload()["profiles"]
    ]


def browser_support(browser, os) -> BrowserProfile:
    b, o = _coerce(browser, os)
    for profile in all_profiles():
        if profile.browser is b and profile.os is o:
            return profile
    raise UnknownCombination(f"{b.value}/{o.value}")


def uninstall_guide(browser, os) -> UninstallGuide:
    profile = browser_support(browser, os)
    data = _payload()["uninstall"]
    guides = data["guides"]
    b, o = profile.browser.value, profile.os.value
    if profile.install_support in ("unsupported", "browser_unavailable"):
        steps = [data["not_installable"]]
    else:
        steps = (guides.get(f"{b}/{o}") or guides.get(f"{b}/{profile.platform}")
                 or guides.get(f"*/{o}") or [data["not_installable"]])
    return UninstallGuide(profile.browser, profile.os, tuple(steps), data["fallback"])
