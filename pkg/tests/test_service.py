import json

import pytest
from fastapi.testclient import TestClient

from tabsplus.canon import canonical_json
from tabsplus.codegen import compile_package, serialize
from tabsplus.cost import run_benchmark
from tabsplus.model import normalize, parse_bpmn
from tabsplus.service import app, store


@pytest.fixture()
def client():
    store.clear()
    with TestClient(app) as c:
        yield c
    store.clear()


@pytest.fixture()
def session_id(client, supply_xml):
    response = client.post("/sessions", content=supply_xml)
    assert response.status_code == 201
    return response.json()["id"]


def test_create_session(client, supply_xml):
    response = client.post("/sessions", content=supply_xml)
    assert response.status_code == 201
    data = response.json()
    # the name comes from the document itself, not a caller override
    assert data["model"] == "supply_chain" and data["actors"] == 5
    # same input, same session id
    again = client.post("/sessions", content=supply_xml)
    assert again.json()["id"] == data["id"]


def test_create_session_rejects_broken_xml(client):
    response = client.post("/sessions", content="<definitions/>")
    assert response.status_code == 400
    assert "code" in response.json()["error"]


def test_unknown_session_is_404(client):
    for path in ("graph", "candidates", "report"):
        assert client.get(f"/sessions/s0000/{path}").status_code == 404
    assert client.put("/sessions/s0000/plan", content="{}").status_code == 404
    assert client.post("/sessions/s0000/generate").status_code == 404


def test_graph_and_candidates_split_the_analysis(client, session_id):
    graph = client.get(f"/sessions/{session_id}/graph").json()
    assert "candidates" not in graph
    assert len(graph["vertices"]) == 24
    cands = client.get(f"/sessions/{session_id}/candidates").json()
    assert [c["id"] for c in cands["candidates"]] == [f"S{i}" for i in range(1, 11)]
    s5 = next(c for c in cands["candidates"] if c["id"] == "S5")
    assert s5["parent"] == "S6"


def test_plan_echoes_nesting(client, session_id):
    response = client.put(
        f"/sessions/{session_id}/plan",
        content=json.dumps({"selection": ["S3", "S4", "S5", "S1", "S2"],
                            "mechanism": "sc-2s"}),
    )
    assert response.status_code == 200
    data = response.json()
    assert data["valid"] is True
    assert data["plan"]["nesting"] == {"S1": "S5", "S2": "S5"}
    assert sorted(data["plan"]["selection"]) == ["S1", "S2", "S3", "S4", "S5"]


def test_plan_validation_errors_are_400(client, session_id):
    bad = client.put(f"/sessions/{session_id}/plan",
                     content=json.dumps({"selection": ["S5", "S8"],
                                         "mechanism": "sc-all"}))
    assert bad.status_code == 400
    assert bad.json()["error"]["code"] == "OverlapNotNested"
    notjson = client.put(f"/sessions/{session_id}/plan", content="{nope")
    assert notjson.status_code == 400


def test_generate_requires_a_plan_first(client, session_id):
    response = client.post(f"/sessions/{session_id}/generate")
    assert response.status_code == 409
    assert response.json()["error"]["code"] == "OutOfOrder"


def test_run_requires_a_package_first(client, session_id):
    client.put(f"/sessions/{session_id}/plan", content="{}")
    response = client.post(f"/sessions/{session_id}/run",
                           content=json.dumps({"trace": []}))
    assert response.status_code == 409


def test_report_requires_a_run_first(client, session_id):
    assert client.get(f"/sessions/{session_id}/report").status_code == 409


def test_package_bytes_match_the_library(client, session_id, supply_xml):
    client.put(f"/sessions/{session_id}/plan",
               content=json.dumps({"selection": ["S1", "S2"],
                                   "mechanism": "sc-all"}))
    response = client.post(f"/sessions/{session_id}/generate")
    assert response.status_code == 200
    model = normalize(parse_bpmn(supply_xml))
    expected = serialize(compile_package(model, ["S1", "S2"], "sc-all"))
    assert response.content == expected


def test_full_session_flow(client, session_id, trace01):
    client.put(f"/sessions/{session_id}/plan",
               content=json.dumps({"selection": ["S5", "S1", "S2"],
                                   "mechanism": "sc-2m"}))
    client.post(f"/sessions/{session_id}/generate")
    run = client.post(f"/sessions/{session_id}/run",
                      content=json.dumps({"trace": trace01, "seed": 3}))
    assert run.status_code == 200
    report = run.json()
    assert report["run"] == "r3" and report["accepted"] == 22
    assert report["txns"] == {"S1": "Committed", "S2": "Committed",
                              "S5": "Committed"}
    stored = client.get(f"/sessions/{session_id}/report")
    assert stored.content == run.content


def test_run_surfaces_conformance_errors(client, session_id, trace01):
    client.put(f"/sessions/{session_id}/plan", content="{}")
    client.post(f"/sessions/{session_id}/generate")
    response = client.post(f"/sessions/{session_id}/run",
                           content=json.dumps({"trace": [trace01[5]]}))
    assert response.status_code == 400
    error = response.json()["error"]
    assert error["code"] == "NonConformant"
    assert error["detail"]["expected"] == ["buyer_send_offer"]


def test_new_plan_invalidates_stale_artifacts(client, session_id, trace01):
    client.put(f"/sessions/{session_id}/plan", content="{}")
    client.post(f"/sessions/{session_id}/generate")
    client.post(f"/sessions/{session_id}/run",
                content=json.dumps({"trace": trace01}))
    client.put(f"/sessions/{session_id}/plan",
               content=json.dumps({"selection": ["S2"], "mechanism": "sc-all"}))
    assert client.post(f"/sessions/{session_id}/run",
                       content=json.dumps({"trace": trace01})).status_code == 409
    assert client.get(f"/sessions/{session_id}/report").status_code == 409


def test_cost_endpoint_matches_the_benchmark(client, session_id):
    response = client.get(f"/sessions/{session_id}/cost", params={"sizes": "4096"})
    assert response.status_code == 200
    expected = run_benchmark(sizes=(4096,)).to_dict()
    assert response.content.decode() == canonical_json(expected) + "\n"
    bad = client.get(f"/sessions/{session_id}/cost", params={"sizes": "x,y"})
    assert bad.status_code == 400


def test_responses_are_canonical_bytes(client, session_id):
    response = client.get(f"/sessions/{session_id}/candidates")
    body = response.content.decode()
    assert body == canonical_json(json.loads(body)) + "\n"
