import numpy as np
import pytest
from fastapi.testclient import TestClient

from main import app

client = TestClient(app)


def test_root_and_health():
    assert client.get("/").status_code == 200
    health = client.get("/health").json()
    assert health["status"] == "ok"
    assert health["checks"] == 11
    assert client.get("/api/v1/base/health").json()["status"] == "healthy"


def test_list_checks():
    response = client.get("/api/v1/verify/checks")
    assert response.status_code == 200
    assert "srrqr_contract" in response.json()["checks"]


def test_verify_subset():
    response = client.post("/api/v1/verify/", json={"checks": ["stability"], "trials": 4, "seed": 1})
    assert response.status_code == 200
    body = response.json()
    assert body["checks"][0]["name"] == "stability"
    assert body["checks"][0]["passed"] is True
    assert "worstSlack" in body["checks"][0]


def test_verify_unknown_check():
    response = client.post("/api/v1/verify/", json={"checks": ["nope"]})
    assert response.status_code == 422
    assert response.json()["detail"]["errors"] == ["nope: no registrado"]


def test_rank_diagnostics():
    response = client.post("/api/v1/diagnostics/rank", json={"state": [[3.0, 0.0, 0.0], [0.0, 1.0, 0.0]]})
    assert response.status_code == 200
    body = response.json()
    assert body["singularValues"] == pytest.approx([3.0, 1.0])
    assert body["effectiveRank"] == pytest.approx(10.0 / 9.0)
    assert body["utilization"] == pytest.approx(5.0 / 9.0)
    assert body["kappa"] == pytest.approx(3.0)
    assert body["keyDim"] == 3 and body["valueDim"] == 2


def test_rank_diagnostics_singular_state_has_null_kappa():
    response = client.post("/api/v1/diagnostics/rank", json={"state": [[1.0, 1.0], [1.0, 1.0]]})
    assert response.status_code == 200
    assert response.json()["kappa"] is None


def test_rank_diagnostics_zero_state():
    response = client.post("/api/v1/diagnostics/rank", json={"state": [[0.0, 0.0], [0.0, 0.0]]})
    assert response.status_code == 422
    assert "message" in response.json()["detail"]


def test_rank_diagnostics_rejects_vectors():
    response = client.post("/api/v1/diagnostics/rank", json={"state": [1.0, 2.0]})
    assert response.status_code == 422


def test_srrqr_endpoint():
    m = np.random.default_rng(0).standard_normal((6, 5)).tolist()
    response = client.post("/api/v1/linalg/srrqr", json={"matrix": m, "k": 2, "f": 1.2})
    assert response.status_code == 200
    body = response.json()
    assert len(body["selected"]) == 2
    assert body["maxRho"] <= 1.2 * (1 + 1e-12)
    assert len(body["logAbsDets"]) == body["swaps"] + 1


def test_srrqr_k_out_of_range():
    response = client.post("/api/v1/linalg/srrqr", json={"matrix": [[1.0, 0.0], [0.0, 1.0]], "k": 2})
    assert response.status_code == 422
    assert "fuera de rango" in response.json()["detail"]["message"]


def test_openapi_schema_builds():
    response = client.get("/openapi.json")
    assert response.status_code == 200
    assert "/api/v1/linalg/srrqr" in response.json()["paths"]
