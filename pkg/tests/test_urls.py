import itertools
from urllib.parse import urljoin, urlsplit

import pytest
from hypothesis import given, settings, strategies as st

from pwa_audit.urls import (
    AbsoluteUrl,
    Origin,
    UnresolvableReference,
    is_parent_path_ref,
    is_secure_context,
    origin_of,
    query_of,
    remove_dot_segments,
    resolve,
    same_origin,
    within_scope,
)

BASES = [
    "https://a.com/",
    "https://a.com/x/y/",
    "https://a.com/x/y/index.html",
    "https://a.com/app/start?utm=1",
    "http://a.com:8080/deep/er/path/",
]
REFERENCES = [
    "", ".", "..", "./", "../", "../../", "../../../../p", "../z", "z", "z/", "./z/../w",
    "/", "/abs", "/abs/../x", "/a/./b/../c/", "?redirect=attack.com", "?id=1#frag", "#frag",
    "g?x=1", "a/b/c/../../d", "//b.com/x", "//a.com/y",
    "http://a.com/p", "https://a.com:443/q", "HTTPS://A.com/Case", ";params", "a%2Fb/../c",
]
SCOPES = ["https://a.com/", "https://a.com/x/", "https://a.com/app"]


def _oracle_origin(url):
    parts = urlsplit(url)
    port = parts.port or {"http": 80, "https": 443}[parts.scheme]
    return parts.scheme, parts.hostname, port


def _oracle_in_scope(url, scope):
    # brute force: same (scheme, host, port) and raw string prefix of the path
    u, s = urlsplit(url), urlsplit(scope)
    return _oracle_origin(url) == _oracle_origin(scope) and (u.path or "/").startswith(s.path or "/")


TRIPLES = list(itertools.product(BASES, REFERENCES, SCOPES))


def test_oracle_table_is_large_enough():
    assert len(TRIPLES) >= 200


@pytest.mark.parametrize("base,ref,scope", TRIPLES)
def test_resolve_and_scope_agree_with_oracle(base, ref, scope):
    expected = urljoin(base, ref)
    got = resolve(base, ref)
    assert _oracle_origin(str(got)) == _oracle_origin(expected)
    e = urlsplit(expected)
    assert got.path == (e.path or "/")
    assert (got.query or "") == e.query
    assert (got.fragment or "") == e.fragment
    assert within_scope(got, scope) == _oracle_in_scope(expected, scope)


@pytest.mark.parametrize("base,ref,expected", [
    ("https://a.com/x/y/", "../z", "https://a.com/x/z"),
    ("https://a.com/", "../../p", "https://a.com/p"),
    ("https://a.com/app/", "?redirect=attack.com", "https://a.com/app/?redirect=attack.com"),
])
def test_resolve_examples(base, ref, expected):
    assert str(resolve(base, ref)) == expected


# RFC 3986 section 5.4 reference resolution examples (g:h omitted: non-http scheme)
RFC_BASE = "http://a/b/c/d;p?q"
RFC_EXAMPLES = [
    ("g", "http://a/b/c/g"), ("./g", "http://a/b/c/g"), ("g/", "http://a/b/c/g/"), ("/g", "http://a/g"),
    ("//g", "http://g/"), ("?y", "http://a/b/c/d;p?y"), ("g?y", "http://a/b/c/g?y"), ("#s", "http://a/b/c/d;p?q#s"),
    ("g#s", "http://a/b/c/g#s"), ("g?y#s", "http://a/b/c/g?y#s"), (";x", "http://a/b/c/;x"),
    ("g;x", "http://a/b/c/g;x"), ("g;x?y#s", "http://a/b/c/g;x?y#s"), ("", "http://a/b/c/d;p?q"),
    (".", "http://a/b/c/"), ("./", "http://a/b/c/"), ("..", "http://a/b/"), ("../", "http://a/b/"),
    ("../g", "http://a/b/g"), ("../..", "http://a/"), ("../../", "http://a/"), ("../../g", "http://a/g"),
    ("../../../g", "http://a/g"), ("../../../../g", "http://a/g"), ("/./g", "http://a/g"),
    ("/../g", "http://a/g"), ("g.", "http://a/b/c/g."), (".g", "http://a/b/c/.g"), ("g..", "http://a/b/c/g.."),
    ("..g", "http://a/b/c/..g"), ("./../g", "http://a/b/g"), ("./g/.", "http://a/b/c/g/"),
    ("g/./h", "http://a/b/c/g/h"), ("g/../h", "http://a/b/c/h"), ("g;x=1/./y", "http://a/b/c/g;x=1/y"),
    ("g;x=1/../y", "http://a/b/c/y"), ("g?y/./x", "http://a/b/c/g?y/./x"), ("g?y/../x", "http://a/b/c/g?y/../x"),
    ("g#s/./x", "http://a/b/c/g#s/./x"), ("g#s/../x", "http://a/b/c/g#s/../x"), ("http:g", None),
    # cases where urljoin departs from the RFC (empty segments, dots under an authority)
    ("..//x", "http://a/b//x"), ("//a/x/../y", "http://a/y"), ("https://c.com/../a", "https://c.com/a"),
    ("c//d/../e", "http://a/b/c/c//e"),
]


@pytest.mark.parametrize("ref,expected", RFC_EXAMPLES)
def test_rfc3986_examples(ref, expected):
    if expected is None:
        with pytest.raises(UnresolvableReference):
            resolve(RFC_BASE, ref)
    else:
        assert str(resolve(RFC_BASE, ref)) == expected


@pytest.mark.parametrize("ref", ["javascript:alert(1)", "data:text/html,x", "mailto:a@b.c", "file:///etc/passwd",
                                 "ftp://a.com/", "https://", "http://:80/"])
def test_unanalyzable_references(ref):
    with pytest.raises(UnresolvableReference):
        resolve("https://a.com/", ref)


def test_origin_examples():
    assert origin_of("https://a.com/x") == Origin("https", "a.com", 443)
    assert origin_of("http://a.com:8080/") == Origin("http", "a.com", 8080)
    assert origin_of("https://xw.qq.com/") != origin_of("https://qq.com/")
    assert str(origin_of("https://a.com:443/")) == "https://a.com"
    assert str(origin_of("http://[::1]:8000/")) == "http://[::1]:8000"


def test_same_origin_examples():
    assert same_origin("https://a.com/p", "https://a.com/q")
    assert not same_origin("https://a.com/", "http://a.com/")
    assert not same_origin("https://sub.a.com/", "https://a.com/")
    assert same_origin("https://A.COM:443/", "https://a.com/")


def test_within_scope_examples():
    assert within_scope("https://a.com/app/", "https://a.com/app/")
    assert within_scope("https://a.com/approot/x", "https://a.com/app")
    assert not within_scope("https://b.com/app/x", "https://a.com/app/")
    assert within_scope("https://a.com/app/?q=1#f", "https://a.com/app/")


@pytest.mark.parametrize("ref,expected", [
    ("../", True), ("./index.html", False), ("a/../../b", True), ("..", True), ("  ../x", True),
    ("/x/..", True), ("./..", True), ("..?q", True), ("..foo", False), ("/a/../b", True), ("", False),
    ("?next=../x", False), ("#../", False),
])
def test_parent_path_examples(ref, expected):
    assert is_parent_path_ref(ref) is expected


def _dot_segment_escape(ref):
    # independent oracle: walk segments and see whether depth ever drops below the start
    depth, lowest = 0, 0
    for seg in ref.strip().split("/")[:-1] + [ref.strip().split("/")[-1]]:
        if seg == "..":
            depth -= 1
        elif seg not in (".", ""):
            depth += 1
        lowest = min(lowest, depth)
    return lowest < 0


@pytest.mark.parametrize("ref", ["a/../../b", "../", "x/y/../../..", "a/b/../c", "./x", "x/../y"])
def test_parent_path_against_depth_oracle_for_relative_refs(ref):
    # any parent segment is flagged; escaping refs must always be among them
    if _dot_segment_escape(ref):
        assert is_parent_path_ref(ref)


def test_query_of():
    assert query_of("?id=1#x") == "id=1"
    assert query_of("/p#a?b") is None
    assert query_of("/p?") == ""


def test_remove_dot_segments_clamps_at_root():
    assert remove_dot_segments("/../../a/./b/../c") == "/a/c"
    assert remove_dot_segments("/a/b/..") == "/a/"


def test_secure_context():
    assert is_secure_context("https://a.com/")
    assert is_secure_context("http://localhost:8000/")
    assert is_secure_context("http://127.0.0.1/")
    assert not is_secure_context("http://a.com/")


def test_explicit_form_and_str():
    u = AbsoluteUrl.parse("https://A.com/x?q#f")
    assert u.explicit_form() == "https://a.com:443/x"
    assert str(u) == "https://a.com/x?q#f"
    assert str(u.directory()) == "https://a.com/"


# -- properties ---------------------------------------------------------------

segment = st.sampled_from(["a", "b", "app", "approot", "x.html", "%41", "~u"])
paths = st.lists(segment, max_size=4).map(lambda s: "/" + "/".join(s))
hosts = st.sampled_from(["a.com", "b.com", "sub.a.com", "127.0.0.1"])
schemes = st.sampled_from(["http", "https"])
ports = st.sampled_from(["", ":8080", ":443", ":80"])
urls = st.builds(lambda sc, h, p, path: f"{sc}://{h}{p}{path}", schemes, hosts, ports, paths)


@settings(max_examples=300)
@given(urls, segment)
def test_within_scope_reflexive_and_monotone(url, extra):
    assert within_scope(url, url)
    extended = url.rstrip("/") + "/" + extra
    if within_scope(url, url):
        assert within_scope(extended, url)


@settings(max_examples=300)
@given(urls, urls, urls)
def test_same_origin_is_an_equivalence(a, b, c):
    assert same_origin(a, a)
    assert same_origin(a, b) == same_origin(b, a)
    if same_origin(a, b) and same_origin(b, c):
        assert same_origin(a, c)


relative_refs = st.lists(st.sampled_from(["a", "b", ".", "..", "", "x.html"]), min_size=1, max_size=5).map(
    "/".join).filter(lambda r: not r.startswith("/"))
queries = st.sampled_from(["", "?q=1", "?redirect=https://evil.example/", "#frag"])


@settings(max_examples=400)
@given(urls, relative_refs, queries)
def test_resolve_keeps_origin_without_authority(base, ref, tail):
    assert same_origin(resolve(base, ref + tail), base)


@settings(max_examples=400)
@given(urls, relative_refs)
def test_non_parent_relative_refs_stay_in_base_directory(base, ref):
    base_dir = AbsoluteUrl.parse(base).directory()
    if not is_parent_path_ref(ref):
        assert within_scope(resolve(base_dir, ref), base_dir)
