"""HTTP service surface: endpoints, payload shapes, error mapping."""

import asyncio
import json
import os

import httpx
import pytest

from fclbench.service import create_app

SMALL = (
    "dataset.num_tasks = 2\n"
    "dataset.classes_per_task = 2\n"
    "dataset.examples_per_class = 12\n"
    "dataset.input_dim = 5\n"
    "partition.num_clients = 2\n"
    "federation.rounds_per_task = 1\n"
    "federation.batch_size = 8\n"
    "seeds = 0\n"
)


@pytest.fixture()
def app():
    return create_app()


def call(app, method, path, payload=None):
    async def go():
        transport = httpx.ASGITransport(app=app)
        async with httpx.AsyncClient(transport=transport, base_url="http://test") as client:
            if method == "GET":
                return await client.get(path)
            return await client.post(path, json=payload)

    return asyncio.run(go())


def test_health(app):
    resp = call(app, "GET", "/health")
    assert resp.status_code == 200
    assert resp.json()["status"] == "ok"


def test_run_endpoint_runs_and_persists(app, tmp_path):
    payload = {"config_text": SMALL, "overrides": [f"out_dir={tmp_path}"]}
    resp = call(app, "POST", "/experiments/run", payload)
    assert resp.status_code == 200
    body = resp.json()
    assert body["experiment_name"] == "fcl"
    assert body["out_dir"] == str(tmp_path)
    (run,) = body["runs"]
    assert run["seed"] == 0
    assert run["num_rounds"] == 2
    assert 0.0 <= run["final_avg_accuracy"] <= 1.0
    assert os.path.isdir(run["artifact_dir"])
    assert sorted(os.listdir(run["artifact_dir"])) == [
        "config.resolved.json", "rounds.csv", "summary.json",
    ]


def test_validate_endpoint(app):
    resp = call(app, "POST", "/configs/validate",
                {"config_text": "federation.lr = 0.2\n", "overrides": []})
    assert resp.status_code == 200
    body = resp.json()
    assert body["resolved"]["federation.lr"] == 0.2
    assert "federation.lr = 0.2" in body["resolved_text"]


def test_config_errors_are_400_with_kind(app):
    resp = call(app, "POST", "/configs/validate",
                {"config_text": "no.such.key = 1\n", "overrides": []})
    assert resp.status_code == 400
    detail = resp.json()["detail"]
    assert detail["kind"] == "config"
    assert "no.such.key" in detail["message"]


def test_io_errors_are_500_with_kind(app, tmp_path):
    payload = {
        "config_text": SMALL,
        "overrides": [],
        "path": str(tmp_path / "absent" / "deep" / "data.csv"),
    }
    resp = call(app, "POST", "/datasets/export", payload)
    assert resp.status_code == 500
    assert resp.json()["detail"]["kind"] == "io"


def test_export_endpoint_writes_file(app, tmp_path):
    path = str(tmp_path / "data.csv")
    resp = call(app, "POST", "/datasets/export",
                {"config_text": SMALL, "overrides": [], "path": path})
    assert resp.status_code == 200
    body = resp.json()
    assert body["path"] == path
    assert body["num_examples"] == 2 * 2 * 12
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    assert len(lines) == 1 + body["num_examples"]
    assert lines[0].endswith("label,task_id")


def test_export_requires_path(app):
    resp = call(app, "POST", "/datasets/export",
                {"config_text": SMALL, "overrides": [], "path": ""})
    assert resp.status_code == 400
    assert resp.json()["detail"]["kind"] == "config"


def test_compare_endpoint(app, tmp_path):
    payload = {"config_text": SMALL, "overrides": [f"out_dir={tmp_path}"]}
    resp = call(app, "POST", "/experiments/compare-schemes", payload)
    assert resp.status_code == 200
    body = resp.json()
    assert set(body["schemes"]) == {"column", "balanced", "shuffled"}
    assert body["seeds"] == [0]
    assert os.path.isfile(body["comparison_path"])
    on_disk = json.loads(open(body["comparison_path"]).read())
    assert on_disk["schemes"] == body["schemes"]


def test_malformed_json_is_422(app):
    resp = call(app, "POST", "/experiments/run", {"overrides": []})
    assert resp.status_code == 422
