import json
import shutil
from pathlib import Path

import pytest

from pwa_audit import __version__
from pwa_audit.cli import run

FIX = Path(__file__).parent / "fixtures"
CLEAN, TRACKING, NOT_JSON = (str(FIX / n) for n in ("clean.webmanifest", "tracking.webmanifest", "not-json.txt"))


def invoke(capsys, *argv):
    code = run(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def invoke_json(capsys, *argv):
    code, out, err = invoke(capsys, *argv, "--format", "json")
    return code, json.loads(out)


def test_clean_manifest(capsys):
    code, doc = invoke_json(capsys, "lint", CLEAN, "--url", "https://a.test/")
    assert code == 0
    [entry] = doc["entries"]
    assert entry["report"]["findings"] == []
    assert doc["schema_version"] == 1 and doc["tool_version"] == __version__


def test_tracking_manifest(capsys):
    code, doc = invoke_json(capsys, "lint", TRACKING)
    assert code == 1
    assert [f["rule_id"] for f in doc["entries"][0]["report"]["findings"]] == ["SEC-SU-TRACK"]


def test_not_json(capsys):
    code, out, err = invoke(capsys, "lint", NOT_JSON)
    assert code == 2 and "malformed" in err


def test_batch_with_one_malformed(capsys):
    code, doc = invoke_json(capsys, "lint", CLEAN, TRACKING, NOT_JSON, "--url", "https://a.test/")
    assert code == 2
    errors = [e for e in doc["entries"] if "error" in e]
    assert len(doc["entries"]) == 3 and len(errors) == 1 and errors[0]["path"] == NOT_JSON
    assert doc["histogram"]["SEC-SU-TRACK"] == 1


def test_batch_all_clean(capsys, tmp_path):
    for i in range(3):
        shutil.copy(CLEAN, tmp_path / f"m{i}.webmanifest")
    assert invoke(capsys, "lint", str(tmp_path), "--url", "https://a.test/", "--jobs", "3")[0] == 0


def test_empty_inputs_are_usage_errors(capsys, tmp_path):
    assert invoke(capsys, "lint")[0] == 2
    code, _, err = invoke(capsys, "lint", str(tmp_path))
    assert code == 2 and "no manifest inputs" in err
    assert invoke(capsys)[0] == 2


def test_threshold(capsys):
    assert invoke(capsys, "lint", TRACKING, "--threshold", "error")[0] == 0
    assert invoke(capsys, "lint", TRACKING, "--threshold", "info")[0] == 1


def test_json_output_is_stable(capsys):
    first = invoke(capsys, "lint", TRACKING, "--format", "json")[1]
    second = invoke(capsys, "lint", TRACKING, "--format", "json")[1]
    assert first == second


def test_placeholder_origin_downgrades(capsys, tmp_path):
    path = tmp_path / "x.webmanifest"
    path.write_text(json.dumps({"name": "X", "start_url": "https://elsewhere.example/", "display": "standalone",
                                "icons": [{"src": "/i.png"}]}))
    _, doc = invoke_json(capsys, "lint", str(path))
    severities = {f["rule_id"]: f["severity"] for f in doc["entries"][0]["report"]["findings"]}
    assert severities["SEC-SU-XORIGIN"] == "info"
    _, doc = invoke_json(capsys, "lint", str(path), "--url", "https://a.test/")
    assert {f["rule_id"]: f["severity"] for f in doc["entries"][0]["report"]["findings"]}["SEC-SU-XORIGIN"] == "error"


def test_lint_with_sw(capsys):
    code, doc = invoke_json(capsys, "lint", CLEAN, "--url", "https://a.test/", "--sw", str(FIX / "sw/cache_only.js"))
    assert code == 1
    assert "SEC-SW-CACHEONLY" in [f["rule_id"] for f in doc["entries"][0]["report"]["findings"]]


def test_lint_with_corpus(capsys, tmp_path):
    corpus = tmp_path / "c.jsonl"
    corpus.write_text(json.dumps({"url": "https://b.test/", "manifest": {"name": "Field Notes"}}) + "\n")
    _, doc = invoke_json(capsys, "lint", CLEAN, "--url", "https://a.test/", "--corpus", str(corpus))
    assert "SEC-NAME-DUP" in [f["rule_id"] for f in doc["entries"][0]["report"]["findings"]]


def test_validate_modes(capsys):
    assert invoke(capsys, "validate", CLEAN, "--url", "https://a.test/")[0] == 0
    code, doc = invoke_json(capsys, "validate", CLEAN, "--url", "https://a.test/", "--mode", "strict_w3c")
    assert code == 1
    assert doc["entries"][0]["report"]["installability"]["missing"] == ["service_worker"]
    assert invoke(capsys, "validate", CLEAN, "--url", "https://a.test/", "--mode", "strict_w3c", "--has-sw")[0] == 0


def test_catalog_commands(capsys):
    code, out, _ = invoke(capsys, "catalog", "tally")
    assert code == 0 and out.strip() == "C=84 I=114 A=5 total=203"
    _, doc = invoke_json(capsys, "catalog", "list")
    assert len(doc["rows"]) == 25
    _, doc = invoke_json(capsys, "catalog", "support", "Chrome", "Android")
    assert doc["install_support"] == "supported"
    code, out, _ = invoke(capsys, "catalog", "uninstall", "Edge", "Windows")
    assert code == 0 and "edge://apps" in out
    assert invoke(capsys, "catalog", "support", "Netscape", "Linux")[0] == 2


@pytest.mark.parametrize("name,code", [("cache_only.js", 1), ("network_first.js", 0)])
def test_sw_classify(capsys, name, code):
    result, doc = invoke_json(capsys, "sw", "classify", str(FIX / "sw" / name))
    assert result == code and doc["strategy"] == json.loads((FIX / "sw/labels.json").read_text())[name]


def test_corpus_commands(capsys, tmp_path):
    corpus = tmp_path / "c.jsonl"
    rows = [{"url": f"https://s{i}.test/", "manifest": {"name": "Starbucks", "start_url": "?id=1"}} for i in range(2)]
    corpus.write_text("".join(json.dumps(r) + "\n" for r in rows) + "{bad\n")
    _, doc = invoke_json(capsys, "corpus", "ingest", str(corpus))
    assert (doc["entry_count"], doc["malformed_count"]) == (2, 1)
    _, doc = invoke_json(capsys, "corpus", "dups", str(corpus))
    assert doc["duplicate_names"] == [["starbucks", 2]]
    code, out, _ = invoke(capsys, "corpus", "freq", str(corpus), "--field", "start_url_raw", "--csv")
    assert code == 0 and out == "token,count\n?id=1,2\n"
    _, doc = invoke_json(capsys, "corpus", "stats", str(corpus))
    assert doc["entry_count"] == 2
    assert invoke(capsys, "corpus", "stats", str(tmp_path / "missing.jsonl"))[0] == 2


def test_fuzz_workflow(capsys, tmp_path):
    session = str(tmp_path / "s.jsonl")
    code, doc = invoke_json(capsys, "fuzz", "gen", CLEAN, "--session", session, "--seed", "5")
    assert code == 0 and doc["seed"] == 5 and doc["mutants"][-1]["operator"] == "malformed_json"
    mid = doc["mutants"][1]["mutant_id"]
    for outcome in ("installed", "installed", "other"):
        assert invoke(capsys, "fuzz", "record", "--session", session, mid, outcome, "--note", "chrome")[0] == 0
    _, report = invoke_json(capsys, "fuzz", "report", "--session", session)
    row = next(r for r in report["mutants"] if r["mutant_id"] == mid)
    assert row["outcomes"] == {"installed": 2, "other": 1}
    assert invoke(capsys, "fuzz", "record", "--session", session, "m99", "installed")[0] == 2
    assert invoke(capsys, "fuzz", "record", "--session", session, mid, "exploded")[0] == 2


def test_probe_commands(capsys, route_servers, tmp_path):
    a, b = route_servers
    a.routes["/"] = (302, {"Location": b.url("/?redirect=https://b.test")}, "")
    b.routes["/?redirect=https://b.test"] = (200, {"X-Frame-Options": "DENY"},
                                             '<link rel="manifest" href="/m.json">')
    b.routes["/m.json"] = (200, {}, json.dumps({"name": "A", "theme_color": "#000"}))
    _, doc = invoke_json(capsys, "probe", "redirects", a.url())
    assert doc["cross_origin_hops"] == [1] and doc["suspicious_params"] == [["redirect", "https://b.test"]]
    _, doc = invoke_json(capsys, "probe", "frames", b.url("/?redirect=https://b.test"))
    assert doc["frameable"] is False
    _, doc = invoke_json(capsys, "probe", "discover", b.url("/?redirect=https://b.test"))
    assert doc["manifest_url"] == b.url("/m.json")
    store = str(tmp_path / "store")
    assert invoke(capsys, "probe", "watch", b.url("/m.json"), "--store", store, "--polls", "1")[0] == 0
    b.routes["/m.json"] = (200, {}, json.dumps({"name": "A", "theme_color": "#fff"}))
    code, out, _ = invoke(capsys, "probe", "watch", b.url("/m.json"), "--store", store, "--polls", "1")
    assert code == 0 and "[update] theme_color" in out
    assert invoke(capsys, "probe", "frames", b.url("/nowhere"), "--timeout", "2")[0] == 0
    assert invoke(capsys, "probe", "discover", b.url("/nowhere"))[0] == 2
