import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from deepaid.datahub import save_artifact_file
from deepaid.detectors import ReconstructionDetector
from deepaid.service import ServiceConfig, create_app

N_DIMS = 6
CENTER = 0.5


@pytest.fixture()
def service_dir(tmp_path):
    """Constant-reconstruction detector: error is the mean squared distance
    from the center, which makes interpretations fully predictable."""
    det = ReconstructionDetector(
        [np.zeros((N_DIMS, N_DIMS))], [np.full(N_DIMS, CENTER)], [0],
        threshold=0.004, quantile=0.995)
    model = tmp_path / "model.json"
    save_artifact_file(det, model)
    data_dir = tmp_path / "state"
    cfg = {
        "data_dir": str(data_dir),
        "tabular_model": str(model),
        "k": 3,
        "intervals": 4,
        "theta_match": 0.2,
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(cfg), encoding="utf-8")
    return cfg_path


def client_for(cfg_path):
    return TestClient(create_app(ServiceConfig.from_file(cfg_path)))


def payload(shifts: dict) -> dict:
    values = [CENTER] * N_DIMS
    for d, s in shifts.items():
        values[d] += s
    return {"kind": "tabular", "payload": {"values": values}}


A1 = {0: 0.30, 1: 0.25, 2: 0.20}        # three shifted dims, graded
A2 = {3: 0.30, 4: 0.25, 2: 0.20}        # shares dim 2 with the same shift


def test_health(service_dir):
    c = client_for(service_dir)
    body = c.get("/health").json()
    assert body["status"] == "ok" and "tabular" in body["detectors"]


def test_normal_row_not_queued(service_dir):
    c = client_for(service_dir)
    r = c.post("/anomalies", json=payload({}))
    assert r.status_code == 200
    body = r.json()
    assert body["queued"] is False
    assert body["score"] < body["threshold"]


def test_anomaly_queued_with_score(service_dir):
    c = client_for(service_dir)
    body = c.post("/anomalies", json=payload(A1)).json()
    assert body["queued"] is True
    assert body["score"] >= body["threshold"]


def test_malformed_and_wrong_dimensionality(service_dir):
    c = client_for(service_dir)
    assert c.post("/anomalies", json={"kind": "tabular"}).status_code == 400
    assert c.post("/anomalies",
                  json={"kind": "tabular", "payload": {"values": "xx"}}
                  ).status_code == 400
    r = c.post("/anomalies",
               json={"kind": "tabular", "payload": {"values": [0.5, 0.5]}})
    assert r.status_code == 422


def test_interpretation_cached_and_denormalized(service_dir):
    c = client_for(service_dir)
    aid = c.post("/anomalies", json=payload(A1)).json()["id"]
    first = c.get(f"/anomalies/{aid}/interpretation").json()
    second = c.get(f"/anomalies/{aid}/interpretation").json()
    assert first == second                      # cached identical body
    assert first["k"] == 3 and len(first["entries"]) == 3
    for e in first["entries"]:
        # identity normalization here: display equals stored value
        assert e["anomaly_display"] == pytest.approx(e["anomaly_value"])
    dims = [e["dim"] for e in first["entries"]]
    assert dims == [0, 1, 2]                    # ordered by effectiveness


def test_interpretation_unknown_and_normal_conflict(service_dir):
    c = client_for(service_dir)
    assert c.get("/anomalies/a999999/interpretation").status_code == 404
    nid = c.post("/anomalies", json=payload({})).json()["id"]
    assert c.get(f"/anomalies/{nid}/interpretation").status_code == 409


def test_feedback_and_match_toy_cycle(service_dir):
    c = client_for(service_dir)
    a1 = c.post("/anomalies", json=payload(A1)).json()["id"]
    a2 = c.post("/anomalies", json=payload(A2)).json()["id"]

    r = c.post("/feedback", json={"anomaly_id": a1, "label": "Scanning"})
    assert r.status_code == 200

    m1 = c.get(f"/match/{a1}").json()
    assert m1["probabilities"]["Scanning"] == pytest.approx(1.0, abs=1e-9)
    assert m1["decision"] == "Scanning"

    m2 = c.get(f"/match/{a2}").json()
    assert m2["probabilities"]["Scanning"] == pytest.approx(1 / 3, abs=1e-9)

    c.post("/feedback", json={"anomaly_id": a2, "label": "Port Scan"})
    m1 = c.get(f"/match/{a1}").json()
    m2 = c.get(f"/match/{a2}").json()
    assert m1["probabilities"]["Scanning"] == pytest.approx(5 / 6, abs=1e-9)
    assert m2["probabilities"]["Port Scan"] == pytest.approx(5 / 6, abs=1e-9)


def test_feedback_conflict_and_overwrite(service_dir):
    c = client_for(service_dir)
    aid = c.post("/anomalies", json=payload(A1)).json()["id"]
    c.post("/feedback", json={"anomaly_id": aid, "label": "X"})
    r = c.post("/feedback", json={"anomaly_id": aid, "label": "Y"})
    assert r.status_code == 409
    r = c.post("/feedback", json={"anomaly_id": aid, "label": "Y",
                                  "overwrite": True})
    assert r.status_code == 200


def test_normal_label_suppresses(service_dir):
    c = client_for(service_dir)
    aid = c.post("/anomalies", json=payload(A1)).json()["id"]
    body = c.post("/feedback", json={"anomaly_id": aid, "label": "NORMAL"}).json()
    assert body["status"] == "suppressed"
    listing = c.get("/anomalies", params={"status": "suppressed"}).json()
    assert [r["id"] for r in listing["anomalies"]] == [aid]


def test_match_empty_distiller_routes_unknown(service_dir):
    c = client_for(service_dir)
    aid = c.post("/anomalies", json=payload(A1)).json()["id"]
    m = c.get(f"/match/{aid}").json()
    assert m["decision"] == "UNKNOWN" and m["probabilities"] == {}
    assert m["drift_flagged"] is True          # nothing recorded yet


def test_listing_ordered_by_recency(service_dir):
    c = client_for(service_dir)
    ids = [c.post("/anomalies", json=payload(A1)).json()["id"] for _ in range(3)]
    listing = c.get("/anomalies").json()["anomalies"]
    assert [r["id"] for r in listing] == list(reversed(ids))


def test_export_import_roundtrip(service_dir):
    c = client_for(service_dir)
    aid = c.post("/anomalies", json=payload(A1)).json()["id"]
    c.post("/feedback", json={"anomaly_id": aid, "label": "Scanning"})
    doc = c.get("/distiller/export").json()
    assert doc["deepaid_schema"] == 1
    r = c.post("/distiller/import", content=json.dumps(doc))
    assert r.status_code == 200
    m = c.get(f"/match/{aid}").json()
    assert m["probabilities"]["Scanning"] == pytest.approx(1.0)


def test_restart_reproduces_match_responses(service_dir):
    c = client_for(service_dir)
    a1 = c.post("/anomalies", json=payload(A1)).json()["id"]
    a2 = c.post("/anomalies", json=payload(A2)).json()["id"]
    c.post("/feedback", json={"anomaly_id": a1, "label": "Scanning"})
    before = (c.get(f"/match/{a1}").text, c.get(f"/match/{a2}").text)

    c2 = client_for(service_dir)    # fresh app over the same state dir
    after = (c2.get(f"/match/{a1}").text, c2.get(f"/match/{a2}").text)
    assert before == after
    assert c2.get(f"/anomalies/{a1}/interpretation").json()["entries"]


def test_auth_token_enforced(tmp_path, service_dir):
    cfg = json.loads(service_dir.read_text(encoding="utf-8"))
    cfg["auth_token"] = "sekret"
    p = tmp_path / "auth_config.json"
    p.write_text(json.dumps(cfg), encoding="utf-8")
    c = client_for(p)
    assert c.get("/health").status_code == 401
    assert c.get("/health", headers={"X-Auth-Token": "sekret"}).status_code == 200
