import numpy as np
import pytest
from fastapi.testclient import TestClient

from scorer_service.app import create_app
from scorer_service.backends import HashingEmbedBackend, LexicalEntailBackend


@pytest.fixture
def client():
    with TestClient(create_app()) as c:
        yield c


def test_health_reports_models(client):
    body = client.get("/health").json()
    assert body["status"] == "ok"
    assert body["embed_dim"] == 384
    assert body["entail_model"]
    assert body["embed_model"]


def test_entail_single_roundtrip(client):
    resp = client.post("/entail", json={"premise": "the price is 40", "hypothesis": "The price is 40"})
    assert resp.status_code == 200
    score = resp.json()["score"]
    assert 0.0 <= score <= 1.0


def test_entail_batch_matches_single(client):
    pairs = [
        {"premise": "the salary is 120k per year", "hypothesis": "The salary is 120k"},
        {"premise": "nothing relevant here", "hypothesis": "The price is 40"},
        {"premise": "alpha beta gamma", "hypothesis": "extract alpha from the text"},
    ]
    batch = client.post("/entail", json={"pairs": pairs}).json()["scores"]
    assert len(batch) == 3
    for pair, expected in zip(pairs, batch):
        single = client.post("/entail", json=pair).json()["score"]
        assert single == expected


def test_self_entailment_sanity(client):
    text = "the quarterly report lists revenue of 4.2 million dollars"
    score = client.post(
        "/entail", json={"premise": text, "hypothesis": text}
    ).json()["score"]
    assert score >= 0.9


def test_scores_bounded(client):
    cases = [
        {"premise": "", "hypothesis": "x"},
        {"premise": "a b c", "hypothesis": "the the the"},
        {"premise": "x " * 50, "hypothesis": "x y"},
    ]
    for case in cases:
        score = client.post("/entail", json=case).json()["score"]
        assert 0.0 <= score <= 1.0


def test_embed_contract(client):
    resp = client.post("/embed", json={"texts": ["hello", "world", ""]})
    assert resp.status_code == 200
    body = resp.json()
    assert body["dim"] == 384
    vectors = np.asarray(body["vectors"])
    assert vectors.shape == (3, 384)
    norms = np.linalg.norm(vectors, axis=1)
    assert np.allclose(norms, 1.0, atol=1e-5)


def test_embed_deterministic(client):
    a = client.post("/embed", json={"texts": ["same text"]}).json()["vectors"]
    b = client.post("/embed", json={"texts": ["same text"]}).json()["vectors"]
    assert a == b


def test_schema_violations_return_400(client):
    assert client.post("/entail", json={"premise": "only half"}).status_code == 400
    assert client.post("/entail", json={"premise": 5, "hypothesis": "x"}).status_code == 400
    assert client.post("/embed", json={"texts": []}).status_code == 400
    assert client.post("/embed", json={"nope": True}).status_code == 400
    assert (
        client.post(
            "/entail",
            json={"premise": "p", "hypothesis": "h", "pairs": []},
        ).status_code
        == 400
    )


def test_oversized_body_returns_413():
    app = create_app(max_body_bytes=200)
    with TestClient(app) as client:
        resp = client.post("/embed", json={"texts": ["x" * 1000]})
        assert resp.status_code == 413


def test_not_ready_returns_503():
    app = create_app()
    with TestClient(app) as client:
        client.app.state.ready = False
        assert client.get("/health").status_code == 503


def test_bearer_token_gate():
    app = create_app(api_token="sekrit")
    with TestClient(app) as client:
        assert client.get("/health").status_code == 401
        ok = client.get("/health", headers={"Authorization": "Bearer sekrit"})
        assert ok.status_code == 200


def test_backends_direct():
    entail = LexicalEntailBackend()
    assert entail.score_pairs([("a b", "a")]) == [1.0]
    embed = HashingEmbedBackend(dim=64)
    v = embed.embed(["alpha", "alpha", "beta"])
    assert np.array_equal(v[0], v[1])
    assert not np.array_equal(v[0], v[2])
