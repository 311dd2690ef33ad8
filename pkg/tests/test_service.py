import time

import pytest
from fastapi.testclient import TestClient

from formopt.service import create_app


def run_config(mode="automated", max_iterations=2, **loop_extra):
    return {
        "part_id": "demo",
        "parameters": [
            {"name": "p", "lower": 50.0, "upper": 400.0},
            {"name": "Fr", "lower": 0.05, "upper": 0.2},
            {"name": "D", "lower": 0.5, "upper": 2.5},
        ],
        "surrogate": {
            "flavor": "independent",
            "use_input_encoder": False,
            "training": {"max_steps": 10},
        },
        "candidates": {"n_star": 30},
        "loop": {"mode": mode, "max_iterations": max_iterations, "seed": 0, **loop_extra},
        "backend": {
            "type": "virtual_press",
            "steps": 3,
            "fixed": {"db": 30.0, "dbn": 50.0, "Rp": 340.0},
        },
    }


@pytest.fixture
def client(tmp_path):
    return TestClient(create_app(workdir=tmp_path))


def wait_for(client, run_id, predicate, timeout=20.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        state = client.get(f"/runs/{run_id}/state").json()
        if predicate(state):
            return state
        time.sleep(0.05)
    raise TimeoutError(f"run {run_id} never reached the expected state: {state}")


class TestRunLifecycle:
    def test_automated_run_to_completion(self, client):
        resp = client.post("/runs", json=run_config())
        assert resp.status_code == 201
        run_id = resp.json()["run_id"]
        state = wait_for(client, run_id, lambda s: s["status"] == "stopped")
        assert state["stop_reason"] == "max_iterations"
        assert state["iteration"] == 2
        assert state["best_so_far"] is not None

        history = client.get(f"/runs/{run_id}/history").json()["records"]
        assert len(history) == 2

        export = client.get(f"/runs/{run_id}/export/targets_vs_iterations")
        assert export.status_code == 200
        lines = export.text.strip().splitlines()
        assert lines[0].startswith("iteration,L1")
        assert len(lines) == 3

    def test_bad_config_is_422(self, client):
        resp = client.post("/runs", json={"part_id": "x", "parameters": []})
        assert resp.status_code == 422
        assert "parameters" in resp.json()["error"]

    def test_missing_range_rejected_up_front(self, client):
        cfg = run_config()
        del cfg["parameters"][0]["lower"]
        resp = client.post("/runs", json=cfg)
        assert resp.status_code == 422
        assert "p" in resp.json()["error"]

    def test_unknown_run_is_404(self, client):
        for path in ("state", "acquisition", "history", "export/targets_vs_iterations"):
            assert client.get(f"/runs/nope/{path}").status_code == 404
        assert client.post("/runs/nope/stop").status_code == 404
        assert client.post("/runs/nope/select", json={}).status_code == 404

    def test_unknown_export_kind_is_422(self, client):
        run_id = client.post("/runs", json=run_config()).json()["run_id"]
        wait_for(client, run_id, lambda s: s["status"] == "stopped")
        resp = client.get(f"/runs/{run_id}/export/pie_chart")
        assert resp.status_code == 422
        assert "kinds" in resp.json()

    def test_parameters_endpoint(self, client):
        run_id = client.post("/runs", json=run_config()).json()["run_id"]
        params = client.get(f"/runs/{run_id}/parameters").json()["parameters"]
        assert [p["name"] for p in params] == ["p", "Fr", "D"]
        assert params[0]["lower"] == 50.0 and params[0]["upper"] == 400.0

    def test_stop_interrupts(self, client):
        run_id = client.post("/runs", json=run_config(max_iterations=10_000)).json()["run_id"]
        assert client.post(f"/runs/{run_id}/stop").status_code == 202
        state = wait_for(client, run_id, lambda s: s["status"] == "stopped")
        assert state["stop_reason"] in ("interrupted", "max_iterations", "no_improvement")


class TestHumanGuided:
    def start(self, client):
        cfg = run_config(mode="human_guided", max_iterations=3)
        run_id = client.post("/runs", json=cfg).json()["run_id"]
        wait_for(client, run_id, lambda s: s["status"] == "awaiting_human")
        return run_id

    def test_select_advances_one_iteration(self, client):
        run_id = self.start(client)
        point = {"p": 200.0, "Fr": 0.1, "D": 1.5}
        resp = client.post(f"/runs/{run_id}/select", json=point)
        assert resp.status_code == 202
        state = wait_for(
            client, run_id,
            lambda s: s["iteration"] == 1 and s["status"] == "awaiting_human",
        )
        history = client.get(f"/runs/{run_id}/history").json()["records"]
        assert history[0]["inputs"] == point
        assert history[0]["meta"]["source"] == "human"
        assert state["best_so_far"]["inputs"] == point

    def test_invalid_point_names_fields(self, client):
        run_id = self.start(client)
        resp = client.post(
            f"/runs/{run_id}/select", json={"p": 1e9, "Fr": 0.1, "D": 1.5}
        )
        assert resp.status_code == 422
        errors = resp.json()["errors"]
        assert "p" in errors and "outside" in errors["p"]
        assert "Fr" not in errors

    def test_missing_field_named(self, client):
        run_id = self.start(client)
        resp = client.post(f"/runs/{run_id}/select", json={"p": 200.0, "Fr": 0.1})
        assert resp.status_code == 422
        assert resp.json()["errors"]["D"] == "missing"

    def test_select_without_awaiting_is_409(self, client):
        run_id = client.post("/runs", json=run_config()).json()["run_id"]
        wait_for(client, run_id, lambda s: s["status"] == "stopped")
        resp = client.post(
            f"/runs/{run_id}/select", json={"p": 200.0, "Fr": 0.1, "D": 1.5}
        )
        assert resp.status_code == 409

    def test_acquisition_profile_shape(self, client):
        run_id = self.start(client)
        for i in range(2):
            client.post(
                f"/runs/{run_id}/select",
                json={"p": 100.0 + 100.0 * i, "Fr": 0.1, "D": 1.5},
            )
            wait_for(
                client, run_id,
                lambda s, n=i + 1: s["iteration"] == n and s["status"] == "awaiting_human",
            )
        profile = client.get(f"/runs/{run_id}/acquisition").json()
        assert profile["available"]
        assert [s["parameter"] for s in profile["sweeps"]] == ["p", "Fr", "D"]
        for sweep in profile["sweeps"]:
            assert len(sweep["values"]) == len(sweep["ei_sum"]) == 51
