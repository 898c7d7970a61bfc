import json
import threading
import urllib.error
import urllib.request

import pytest

from hltm.backends import track_usage
from hltm.service import Api, make_server
from conftest import small_engine


@pytest.fixture
def server():
    eng, ids = small_engine()
    srv = make_server(eng, "127.0.0.1", 0)
    t = threading.Thread(target=srv.serve_forever, daemon=True)
    t.start()
    base = "http://%s:%d" % srv.server_address[:2]
    yield base, eng, ids
    srv.shutdown()
    srv.server_close()


def call(base, method, path, body=None, raw=None):
    data = raw if raw is not None else (json.dumps(body).encode() if body is not None else None)
    req = urllib.request.Request(base + path, data=data, method=method)
    try:
        with urllib.request.urlopen(req, timeout=10) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as err:
        return err.code, json.loads(err.read())


def test_index_then_query_over_http(server):
    base, eng, ids = server
    assert call(base, "GET", "/health")[1]["dirty"] == 4
    status, rep = call(base, "POST", "/index", {"mode": "full"})
    assert status == 200 and rep["nodes_built"] == 7
    status, out = call(base, "POST", "/query", {"text": "location for this project",
                                                 "scope_business_key": "proj-3"})
    assert status == 200 and out["usage"]["llm_calls"] == 2
    assert out["answer"] == "Austin TX" and out["citations"] == [ids["p3"]]
    lib = eng.query("location for this project", "proj-3").to_dict()
    for key in ("answer", "citations", "hits", "scope", "parsed_facets"):
        assert out[key] == lib[key]


def test_scope_isolation_over_http(server):
    base, eng, ids = server
    call(base, "POST", "/index", {"mode": "full"})
    _, out = call(base, "POST", "/query", {"text": "location=Seattle title", "scope_business_key": "seat-1"})
    hit_nodes = {h["node"] for view in out["hits"].values() for h in view}
    assert hit_nodes and hit_nodes <= eng.tree.subtree(ids["s1"])


def test_documents_delete_and_memory_404(server):
    base, eng, ids = server
    raw = b'{"doc_id": "z", "node_business_key": "proj-1", "text": "skill: Go"}\n'
    status, out = call(base, "POST", "/documents", raw=raw)
    assert status == 202 and out == {"accepted": 1, "dirty": [ids["p1"]]}
    call(base, "POST", "/index", {})
    assert call(base, "GET", "/nodes/proj-4/memory")[0] == 200
    assert call(base, "DELETE", "/nodes/proj-4")[0] == 200
    assert call(base, "GET", "/nodes/proj-4/memory")[0] == 404
    assert call(base, "DELETE", "/documents/z")[1]["node"] == ids["p1"]


def test_error_mapping(server):
    base, _, _ = server
    assert call(base, "POST", "/query", {"text": "x"})[0] == 400
    assert call(base, "POST", "/query", raw=b"not json")[0] == 400
    assert call(base, "POST", "/query", {"text": "x", "scope_business_key": "nope"})[0] == 404
    assert call(base, "POST", "/nodes", {"business_key": "proj-1", "level": "project",
                                         "parent": "seat-1"})[0] == 409
    assert call(base, "GET", "/nope")[0] == 404
    assert call(base, "DELETE", "/tree")[0] == 405
    assert call(base, "POST", "/index", {"mode": "sideways"})[0] == 400


def test_profile_flow_via_dispatch():
    eng, _ = small_engine()
    api = Api(eng)
    body = json.dumps({"queries": [{"text": f"location=x{i}", "timestamp": "2026-01-01"}
                                   for i in range(3)]}).encode()
    status, prof = api.dispatch("POST", "/profiles/mine", body)
    assert status == 201 and prof["facet_names"] == [["location", 3]]
    assert api.dispatch("POST", f"/profiles/{prof['id']}/apply", b"")[0] == 409
    assert api.dispatch("POST", f"/profiles/{prof['id']}/approve", b"")[0] == 200
    assert api.dispatch("POST", f"/profiles/{prof['id']}/apply", b"")[0] == 200
    assert api.dispatch("GET", "/profiles", b"")[1]["active"] == prof["id"]
    assert api.dispatch("POST", "/profiles/none/approve", b"")[0] == 404


def test_query_usage_matches_tracker():
    eng, _ = small_engine()
    eng.full_index()
    with track_usage() as usage:
        status, out = Api(eng).dispatch("POST", "/query",
                                        json.dumps({"text": "title", "scope": "acct-1"}).encode())
    assert status == 200 and usage.llm_calls == out["usage"]["llm_calls"] == 2
