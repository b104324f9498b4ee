"""URL reasoning used by every manifest rule: origins, scope membership,
relative resolution and parent-path detection.

Only ``http`` and ``https`` URLs are analyzed.  Resolution follows the
RFC 3986 reference-resolution algorithm with dot-segment removal; ``../``
chains that climb above the root are clamped at ``/``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Union

DEFAULT_PORTS = {"http": 80, "https": 443}

# RFC 3986 appendix B
_URI_RE = re.compile(r"^(?:([^:/?#]+):)?(?://([^/?#]*))?([^?#]*)(?:\?([^#]*))?(?:#(.*))?$", re.S)
_SCHEME_RE = re.compile(r"^[A-Za-z][A-Za-z0-9+.\-]*$")


class UnresolvableReference(ValueError):
    """The reference cannot be turned into an analyzable http(s) URL."""


def _ascii_lower(text: str) -> str:
    return "".join(c.lower() if c.isascii() else c for c in text)


@dataclass(frozen=True)
class Origin:
    scheme: str
    host: str
    port: int

    def __str__(self) -> str:
        host = f"[{self.host}]" if ":" in self.host else self.host
        if DEFAULT_PORTS.get(self.scheme) == self.port:
            return f"{self.scheme}://{host}"
        return f"{self.scheme}://{host}:{self.port}"


@dataclass(frozen=True)
class AbsoluteUrl:
    scheme: str
    host: str
    port: int
    path: str = "/"
    query: Optional[str] = None
    fragment: Optional[str] = None

    @classmethod
    def parse(cls, text: str) -> "AbsoluteUrl":
        """Parse an absolute http(s) URL, normalizing dot segments."""
        m = _URI_RE.match(text.strip())
        scheme, authority, path, query, fragment = m.groups()
        if scheme is None or authority is None:
            raise UnresolvableReference(f"not an absolute URL: {text!r}")
        return _build(scheme, authority, remove_dot_segments(path), query, fragment)

    @property
    def origin(self) -> Origin:
        return Origin(self.scheme, self.host, self.port)

    @property
    def authority(self) -> str:
        host = f"[{self.host}]" if ":" in self.host else self.host
        if DEFAULT_PORTS.get(self.scheme) == self.port:
            return host
        return f"{host}:{self.port}"

    def explicit_form(self) -> str:
        """``scheme://host:port/path`` with the port always spelled out."""
        host = f"[{self.host}]" if ":" in self.host else self.host
        return f"{self.scheme}://{host}:{self.port}{self.path}"

    def without_query(self) -> "AbsoluteUrl":
        return AbsoluteUrl(self.scheme, self.host, self.port, self.path)

    def directory(self) -> "AbsoluteUrl":
        """The URL truncated after the last ``/`` of its path."""
        return AbsoluteUrl(self.scheme, self.host, self.port, self.path[: self.path.rfind("/") + 1])

    def __str__(self) -> str:
        out = f"{self.scheme}://{self.authority}{self.path}"
        if self.query is not None:
            out += "?" + self.query
        if self.fragment is not None:
            out += "#" + self.fragment
        return out


UrlLike = Union[AbsoluteUrl, str]


def as_url(value: UrlLike) -> AbsoluteUrl:
    return value if isinstance(value, AbsoluteUrl) else AbsoluteUrl.parse(value)


def _build(scheme: str, authority: str, path: str, query, fragment) -> AbsoluteUrl:
    scheme = scheme.lower()
    if scheme not in DEFAULT_PORTS:
        raise UnresolvableReference(f"unsupported scheme: {scheme!r}")
    hostport = authority.rpartition("@")[2]
    if hostport.startswith("["):
        host, sep, rest = hostport[1:].partition("]")
        if not sep:
            raise UnresolvableReference(f"bad IPv6 host: {authority!r}")
        port_text = rest[1:] if rest.startswith(":") else rest
        if rest and not rest.startswith(":"):
            raise UnresolvableReference(f"bad authority: {authority!r}")
    else:
        host, _, port_text = hostport.partition(":")
    if not host:
        raise UnresolvableReference(f"empty host in {authority!r}")
    if port_text:
        if not port_text.isdigit() or int(port_text) > 65535:
            raise UnresolvableReference(f"bad port: {port_text!r}")
        port = int(port_text)
    else:
        port = DEFAULT_PORTS[scheme]
    return AbsoluteUrl(scheme, _ascii_lower(host), port, path or "/", query, fragment)


def remove_dot_segments(path: str) -> str:
    """RFC 3986 section 5.2.4, written as a segment stack."""
    if not path:
        return path
    absolute = path.startswith("/")
    segments = path.split("/")
    if absolute:
        segments = segments[1:]
    out: list[str] = []
    for i, seg in enumerate(segments):
        last = i == len(segments) - 1
        if seg == ".":
            if last:
                out.append("")
        elif seg == "..":
            if out:
                out.pop()
            if last:
                out.append("")
        else:
            out.append(seg)
    joined = "/".join(out)
    return "/" + joined if absolute else joined


def _merge(base: AbsoluteUrl, ref_path: str) -> str:
    return base.path[: base.path.rfind("/") + 1] + ref_path


def resolve(base: UrlLike, reference: str) -> AbsoluteUrl:
    """Resolve ``reference`` against ``base``.

    Raises UnresolvableReference for schemes other than http/https
    (``javascript:``, ``data:``, ...) and for authorities without a host.
    """
    base = as_url(base)
    m = _URI_RE.match(reference.strip())
    scheme, authority, path, query, fragment = m.groups()
    if scheme is not None:
        if not _SCHEME_RE.match(scheme):
            raise UnresolvableReference(f"bad scheme in {reference!r}")
        if authority is None:
            raise UnresolvableReference(f"no authority in {reference!r}")
        return _build(scheme, authority, remove_dot_segments(path), query, fragment)
    if authority is not None:
        return _build(base.scheme, authority, remove_dot_segments(path), query, fragment)
    if path == "":
        return AbsoluteUrl(base.scheme, base.host, base.port, base.path,
                           query if query is not None else base.query, fragment)
    if path.startswith("/"):
        target = remove_dot_segments(path)
    else:
        target = remove_dot_segments(_merge(base, path))
    return AbsoluteUrl(base.scheme, base.host, base.port, target or "/", query, fragment)


def has_authority(reference: str) -> bool:
    """True when ``reference`` names its own host (``//h/...`` or ``scheme://h``)."""
    return _URI_RE.match(reference.strip()).group(2) is not None


def origin_of(url: UrlLike) -> Origin:
    return as_url(url).origin


def same_origin(a: UrlLike, b: UrlLike) -> bool:
    return origin_of(a) == origin_of(b)


def within_scope(url: UrlLike, scope: UrlLike) -> bool:
    """Code-unit prefix test on the path; query and fragment are ignored.

    ``/app`` therefore contains ``/approot``; the lint layer warns about
    scopes without a trailing slash.
    """
    url, scope = as_url(url), as_url(scope)
    return url.origin == scope.origin and url.path.startswith(scope.path)


def query_of(reference: str) -> Optional[str]:
    """Query text of a raw reference (without ``?``), or None when absent."""
    before_fragment = reference.strip().split("#", 1)[0]
    if "?" not in before_fragment:
        return None
    return before_fragment.split("?", 1)[1]


def is_parent_path_ref(reference: str) -> bool:
    """True when the path part has a ``..`` segment (``../x``, ``a/../b``, ``x/..``)."""
    path = _URI_RE.match(reference.strip()).group(3)
    return ".." in path.split("/")


def is_loopback_host(host: str) -> bool:
    host = host.lower()
    if host in ("localhost", "::1") or host.endswith(".localhost"):
        return True
    parts = host.split(".")
    return len(parts) == 4 and parts[0] == "127" and all(p.isdigit() for p in parts)


def is_secure_context(url: UrlLike) -> bool:
    url = as_url(url)
    return url.scheme == "https" or is_loopback_host(url.host)
