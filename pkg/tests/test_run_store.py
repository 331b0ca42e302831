import os

import run_store


def _use_tmp_db(tmp_path):
    # Use a temporary DB location to avoid clobbering the user's real registry
    dbpath = tmp_path / "runs.db"
    run_store.DB_FILENAME = str(dbpath)
    os.makedirs(os.path.dirname(run_store.DB_FILENAME), exist_ok=True)
    run_store.init_db()


def test_add_and_finish_run_with_outputs(tmp_path, monkeypatch):
    monkeypatch.setattr(run_store, "DB_FILENAME", run_store.DB_FILENAME)
    _use_tmp_db(tmp_path)

    run_store.add_run("jlt-0003", 3, "jlt", 103, started_at="2024-01-01T00:00:00")
    row = run_store.get_run("jlt-0003")
    assert row is not None
    assert row["status"] == "running"
    assert int(row["run_index"]) == 3 and int(row["seed"]) == 103
    assert row["outputs"] == []

    # list_runs should include our running key when active_only=True
    active = run_store.list_runs(active_only=True)
    assert [r["run_key"] for r in active] == ["jlt-0003"]

    outputs = ["out/agents_jlt_3.csv", "out/tracks_jlt_3.csv", "out/metrics_jlt_3.csv"]
    run_store.update_run_status("jlt-0003", "finished", outputs=outputs)
    row = run_store.get_run("jlt-0003")
    assert row["status"] == "finished"
    assert row["outputs"] == outputs
    assert row["ended_at"]
    assert run_store.list_runs(active_only=True) == []


def test_failed_run_keeps_its_error(tmp_path, monkeypatch):
    monkeypatch.setattr(run_store, "DB_FILENAME", run_store.DB_FILENAME)
    _use_tmp_db(tmp_path)

    run_store.add_run("slt-0000", 0, "slt", 0)
    run_store.add_run("jlt-0000", 0, "jlt", 0)
    run_store.update_run_status("slt-0000", "failed", error="degenerate belief for agent 2")
    rows = run_store.list_runs()
    assert [r["run_key"] for r in rows] == ["jlt-0000", "slt-0000"]
    assert rows[1]["error"] == "degenerate belief for agent 2"
    assert run_store.get_run("missing") is None


def test_re_adding_a_key_restarts_the_row(tmp_path, monkeypatch):
    monkeypatch.setattr(run_store, "DB_FILENAME", run_store.DB_FILENAME)
    _use_tmp_db(tmp_path)

    run_store.add_run("jlt-0001", 1, "jlt", 1)
    run_store.update_run_status("jlt-0001", "finished", outputs=["a.csv"])
    run_store.add_run("jlt-0001", 1, "jlt", 1)
    row = run_store.get_run("jlt-0001")
    assert row["status"] == "running"
    assert row["outputs"] == []
    assert len(run_store.list_runs()) == 1
