"""Service endpoints: request validation and error mapping."""

import pytest
from fastapi.testclient import TestClient

from singdiff.config import RunConfig, format_config
from singdiff.corpus import make_corpus
from singdiff.service import create_app

CONFIG_TEXT = format_config(RunConfig())


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json() == {"status": "ok"}


def test_prepare_round_trip(client, tmp_path):
    corpus = tmp_path / "corpus"
    make_corpus(corpus, n_items=2, seed=1)
    response = client.post("/prepare", json={
        "config_text": CONFIG_TEXT,
        "corpus_dir": str(corpus),
        "out_dir": str(tmp_path / "data"),
    })
    assert response.status_code == 200
    body = response.json()
    assert body["ok"] is True
    assert body["n_items"] == 2
    assert body["labeling_counts"] == {"full": 2}
    assert len(body["config_hash"]) == 64
    assert (tmp_path / "data" / "manifest.txt").exists()


def test_prepare_missing_corpus_is_400(client, tmp_path):
    response = client.post("/prepare", json={
        "config_text": CONFIG_TEXT,
        "corpus_dir": str(tmp_path / "nope"),
        "out_dir": str(tmp_path / "data"),
    })
    assert response.status_code == 400
    assert "does not exist" in response.json()["detail"]


def test_bad_config_text_is_400(client, tmp_path):
    response = client.post("/prepare", json={
        "config_text": "training.bacth = 8\n",
        "corpus_dir": str(tmp_path),
        "out_dir": str(tmp_path / "data"),
    })
    assert response.status_code == 400
    assert "unknown config key" in response.json()["detail"]


def test_missing_request_field_is_422(client):
    response = client.post("/train", json={"config_text": CONFIG_TEXT})
    assert response.status_code == 422


def test_train_missing_manifest_is_400(client, tmp_path):
    response = client.post("/train", json={
        "config_text": CONFIG_TEXT,
        "data_dir": str(tmp_path),
        "run_dir": str(tmp_path / "run"),
    })
    assert response.status_code == 400
    assert "manifest" in response.json()["detail"]


def test_eval_mismatched_sets_is_400(client, tmp_path):
    ref = tmp_path / "ref"
    gen = tmp_path / "gen"
    ref.mkdir()
    gen.mkdir()
    (ref / "a.mel").write_bytes(b"")
    response = client.post("/eval", json={
        "config_text": CONFIG_TEXT,
        "ref_dir": str(ref),
        "gen_dir": str(gen),
    })
    assert response.status_code == 400
    assert "missing from gen" in response.json()["detail"]


def test_oracle_check_passes(client):
    response = client.post("/oracle-check", json={
        "config_text": CONFIG_TEXT,
        "n_points": 100,
        "seed": 0,
    })
    assert response.status_code == 200
    body = response.json()
    assert body["passed"] is True
    assert body["report"]["telescoping_residual"] <= 1e-12
    assert "result = pass" in body["text"]
