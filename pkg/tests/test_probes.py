import json

import pytest
from hypothesis import given, strategies as st

from pwa_audit.manifest import MalformedJson
from pwa_audit.probes import (
    UPDATE_TRIGGERING_FIELDS,
    FetchFailure,
    Mechanism,
    NoManifestLink,
    ProbeConfig,
    diff_fields,
    discover_manifest,
    fetch_manifest,
    frame_protection_probe,
    judge_framing,
    meta_refresh_target,
    redirect_probe,
    suspicious_params,
    watch_manifest,
)

CONFIG = ProbeConfig(timeout=5, trust_env=False)
MANIFEST = {"name": "Notes", "start_url": "/", "display": "standalone", "theme_color": "#000000",
            "background_color": "#ffffff"}


def html(head=""):
    return f"<!doctype html><html><head>{head}</head><body>hi</body></html>"


# -- discovery and fetch -------------------------------------------------------

def test_discover_resolves_relative_href(route_servers):
    a, _ = route_servers
    a.routes["/p/"] = (200, {}, html('<link rel="manifest" href="/m.json">'))
    assert str(discover_manifest(a.url("/p/"), CONFIG)) == a.url("/m.json")


def test_discover_relative_to_page_and_base(route_servers):
    a, _ = route_servers
    a.routes["/p/"] = (200, {}, html('<link rel="icon" href="x"><link rel="Manifest" href="m.json">'))
    assert str(discover_manifest(a.url("/p/"), CONFIG)) == a.url("/p/m.json")
    a.routes["/q/"] = (200, {}, html('<base href="/assets/"><link rel="manifest" href="m.json">'))
    assert str(discover_manifest(a.url("/q/"), CONFIG)) == a.url("/assets/m.json")


def test_discover_without_link(route_servers):
    a, _ = route_servers
    a.routes["/"] = (200, {}, html())
    with pytest.raises(NoManifestLink):
        discover_manifest(a.url(), CONFIG)


def test_discover_404(route_servers):
    a, _ = route_servers
    with pytest.raises(FetchFailure) as info:
        discover_manifest(a.url("/gone"), CONFIG)
    assert info.value.status == 404


def test_connection_refused_is_fetch_failure(route_servers):
    a, _ = route_servers
    url = a.url()
    a.close()
    with pytest.raises(FetchFailure) as info:
        frame_protection_probe(url, ProbeConfig(timeout=2, trust_env=False, retries=0))
    assert info.value.status is None


def test_fetch_manifest(route_servers):
    a, _ = route_servers
    a.routes["/m.json"] = (200, {"Content-Type": "application/manifest+json"}, json.dumps(MANIFEST))
    raw, headers = fetch_manifest(a.url("/m.json"), a.url("/"), CONFIG)
    assert raw.fields["name"] == "Notes" and str(raw.document_url) == a.url("/")
    assert headers["content-type"] == "application/manifest+json"
    a.routes["/page"] = (200, {}, html())
    with pytest.raises(MalformedJson):
        fetch_manifest(a.url("/page"), config=CONFIG)


# -- redirects -------------------------------------------------------------------

def test_cross_origin_302(route_servers):
    a, b = route_servers
    a.routes["/"] = (302, {"Location": b.url("/landing")}, "")
    b.routes["/landing"] = (200, {}, html())
    report = redirect_probe(a.url(), config=CONFIG)
    assert [h.url for h in report.chain] == [a.url(), b.url("/landing")]
    assert report.chain[0].mechanism is None and report.chain[1].mechanism is Mechanism.HTTP_3XX
    assert report.chain[0].status == 302 and report.chain[1].status == 200
    assert report.cross_origin_hops == [1] and not report.truncated


def test_meta_refresh_hop(route_servers):
    a, b = route_servers
    a.routes["/"] = (200, {}, html(f'<meta http-equiv="refresh" content="0;url={b.url("/")}">'))
    b.routes["/"] = (200, {}, html())
    report = redirect_probe(a.url(), config=CONFIG)
    assert report.chain[1].mechanism is Mechanism.META_REFRESH
    assert report.cross_origin_hops == [1]


def test_js_pattern_reported_not_followed(route_servers):
    a, b = route_servers
    a.routes["/"] = (200, {}, html(f"<script>window.location.assign('{b.url('/js')}')</script>"))
    report = redirect_probe(a.url(), config=CONFIG)
    assert [h.mechanism for h in report.chain] == [None, Mechanism.DETECTED_JS_PATTERN]
    assert "/js" not in b.hits


@pytest.mark.parametrize("script", ["window.location.href = '/next';", "window.location = '/next';",
                                    "location.replace('/next')"])
def test_js_pattern_variants(route_servers, script):
    a, _ = route_servers
    a.routes["/"] = (200, {}, html(f"<script>{script}</script>"))
    report = redirect_probe(a.url(), config=CONFIG)
    assert report.chain[-1].url == a.url("/next")


def test_redirect_loop_stops(route_servers):
    a, _ = route_servers
    a.routes["/x"] = (302, {"Location": "/y"}, "")
    a.routes["/y"] = (301, {"Location": "/x"}, "")
    report = redirect_probe(a.url("/x"), config=CONFIG)
    assert len(report.chain) == 2 and any("loop" in n for n in report.notes)


def test_max_hops_truncates(route_servers):
    a, _ = route_servers
    for i in range(10):
        a.routes[f"/{i}"] = (302, {"Location": f"/{i + 1}"}, "")
    report = redirect_probe(a.url("/0"), max_hops=3, config=CONFIG)
    assert len(report.chain) == 4 and report.truncated


def test_later_failure_truncates(route_servers):
    a, b = route_servers
    dead = b.url("/")
    b.close()
    a.routes["/"] = (302, {"Location": dead}, "")
    report = redirect_probe(a.url(), config=ProbeConfig(timeout=2, trust_env=False, retries=0))
    assert report.truncated and len(report.chain) == 2


def test_first_hop_failure_raises(route_servers):
    a, _ = route_servers
    url = a.url()
    a.close()
    with pytest.raises(FetchFailure):
        redirect_probe(url, config=ProbeConfig(timeout=2, trust_env=False, retries=0))


def test_suspicious_params(route_servers):
    a, _ = route_servers
    a.routes["/?redirect=https://b.test"] = (200, {}, html())
    report = redirect_probe(a.url("/?redirect=https://b.test"), config=CONFIG)
    assert report.suspicious_params == [("redirect", "https://b.test")]
    assert suspicious_params("https://a.test/?id=1") == []


def test_max_hops_must_be_positive():
    with pytest.raises(ValueError):
        redirect_probe("http://127.0.0.1:9/", max_hops=0)


@pytest.mark.parametrize("content,target", [("0;url=https://b.test/", "https://b.test/"),
                                            ("5; URL='/x'", "/x"), ("3", None)])
def test_meta_refresh_parsing(content, target):
    assert meta_refresh_target(content) == target


# -- framing ---------------------------------------------------------------------

@pytest.mark.parametrize("headers,frameable", [
    ({}, True),
    ({"X-Frame-Options": "DENY"}, False),
    ({"X-Frame-Options": "sameorigin"}, False),
    ({"X-Frame-Options": "ALLOW-FROM https://x.test/"}, True),
    ({"Content-Security-Policy": "frame-ancestors 'none'"}, False),
    ({"Content-Security-Policy": "default-src 'self'; frame-ancestors 'self'"}, False),
    ({"Content-Security-Policy": "frame-ancestors *"}, True),
    ({"Content-Security-Policy": "frame-ancestors https:"}, True),
    ({"Content-Security-Policy": "script-src 'self'"}, True),
])
def test_frame_probe(route_servers, headers, frameable):
    a, _ = route_servers
    a.routes["/"] = (200, headers, html())
    report = frame_protection_probe(a.url(), CONFIG)
    assert report.frameable is frameable
    assert frame_protection_probe(a.url(), CONFIG) == report


def test_frame_probe_does_not_follow_redirects(route_servers):
    a, b = route_servers
    a.routes["/"] = (302, {"Location": b.url()}, "")
    report = frame_protection_probe(a.url(), CONFIG)
    assert report.status == 302 and b.hits == []


def test_judge_framing_headers():
    report = judge_framing("https://a.test/", {"x-frame-options": "DENY",
                                               "content-security-policy": "frame-ancestors *"})
    assert not report.frameable and report.csp_frame_ancestors == "*"


# -- watching --------------------------------------------------------------------

def watch(server, tmp_path, bodies):
    """Serve each body in turn, one per poll, and collect the diffs."""
    queue = list(bodies)

    def advance(_):
        server.routes["/m.json"] = (200, {}, json.dumps(queue.pop(0)))

    advance(0)
    return list(watch_manifest(server.url("/m.json"), 0, tmp_path / "store", CONFIG,
                               max_polls=len(bodies), sleep=advance))


def test_theme_color_change_triggers(route_servers, tmp_path):
    [diff] = watch(route_servers[0], tmp_path, [MANIFEST, dict(MANIFEST, theme_color="#ff0000")])
    [change] = diff.changed_fields
    assert (change.field, change.old, change.new, change.update_triggering) == \
        ("theme_color", "#000000", "#ff0000", True)


def test_background_color_change_does_not_trigger(route_servers, tmp_path):
    [diff] = watch(route_servers[0], tmp_path, [MANIFEST, dict(MANIFEST, background_color="#eeeeee")])
    assert [c.update_triggering for c in diff.changed_fields] == [False]


def test_no_change_no_diff(route_servers, tmp_path):
    assert watch(route_servers[0], tmp_path, [MANIFEST, MANIFEST, MANIFEST]) == []


def test_baseline_persists_across_watchers(route_servers, tmp_path):
    server = route_servers[0]
    assert watch(server, tmp_path, [MANIFEST]) == []
    [diff] = watch(server, tmp_path, [dict(MANIFEST, name="Renamed")])
    assert diff.changed_fields[0].field == "name"


def test_poll_miss_continues(route_servers, tmp_path):
    server = route_servers[0]
    bodies = iter([None, dict(MANIFEST, scope="/app/")])

    def advance(_):
        body = next(bodies)
        server.routes["/m.json"] = (500, {}, "down") if body is None else (200, {}, json.dumps(body))

    server.routes["/m.json"] = (200, {}, json.dumps(MANIFEST))
    diffs = list(watch_manifest(server.url("/m.json"), 0, tmp_path / "s", CONFIG, max_polls=3, sleep=advance))
    assert [c.field for d in diffs for c in d.changed_fields] == ["scope"]


def test_first_poll_failure_raises(route_servers, tmp_path):
    with pytest.raises(FetchFailure):
        list(watch_manifest(route_servers[0].url("/nothing"), 0, tmp_path / "s", CONFIG, max_polls=1))


keys = st.sampled_from(["name", "short_name", "display", "start_url", "theme_color", "scope",
                        "background_color", "icons", "description", "x"])
maps = st.dictionaries(keys, st.one_of(st.integers(0, 2), st.sampled_from(["a", "b"]), st.none()), max_size=6)


@given(maps, maps)
def test_diff_partitions_by_trigger_set(old, new):
    changes = diff_fields(old, new)
    assert bool(changes) == (old != new or any(type(old[k]) is not type(new[k]) for k in old if k in new))
    triggering = {c.field for c in changes if c.update_triggering}
    quiet = {c.field for c in changes if not c.update_triggering}
    assert triggering <= UPDATE_TRIGGERING_FIELDS and not quiet & UPDATE_TRIGGERING_FIELDS
    assert triggering | quiet == {k for k in set(old) | set(new) if old.get(k, 0.5) != new.get(k, 0.5)} | \
        {k for k in set(old) & set(new) if type(old[k]) is not type(new[k])}
