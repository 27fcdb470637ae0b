import math

import pytest

import cpift


def test_snapshot_round_trip(tmp_path):
    snap = cpift.ParameterSnapshot.from_tensors(
        {"b": ([2], [0.5, -1.0]), "a": ([2, 2], [1.0, 2.0, 3.0, 4.0])}, {"stage": "x"}
    )
    assert len(snap) == 6
    assert [t.name for t in snap.tensors] == ["a", "b"]
    assert snap.global_index("b", 1) == 5
    path = tmp_path / "s.snp"
    cpift.write_snapshot(snap, path)
    back = cpift.read_snapshot(path)
    assert back.bit_identical(snap)
    assert back.values("b") == [0.5, -1.0]
    assert back.meta["stage"] == "x"


def test_corrupt_snapshot_raises(tmp_path):
    path = tmp_path / "bad.snp"
    path.write_bytes(b"NOTASNAP" + b"\0" * 16)
    with pytest.raises(cpift.Error):
        cpift.read_snapshot(path)


def test_core_selection_and_grouping():
    assert cpift.core_size(0.29, 10000) == 29
    assert cpift.select_core([0.1, 0.9, 0.3, 0.9], 50) == [1, 3]
    assert cpift.jaccard([0, 1, 2], [1, 2, 3], 10) == 0.5
    groups = cpift.group_tasks({"a": [0, 1, 2], "b": [1, 2, 3], "c": [7, 8]}, 10, tau=0.3)
    assert sorted(sorted(g) for g in groups) == [["a", "b"], ["c"]]


def test_slerp():
    values, used_slerp, angle = cpift.slerp([1.0, 0.0], [0.0, 1.0], 0.5)
    assert used_slerp
    assert angle == pytest.approx(math.pi / 2)
    assert values == pytest.approx([math.sqrt(0.5)] * 2, abs=1e-12)
    values, used_slerp, _ = cpift.slerp([1.0, 0.0], [2.0, 0.0], 0.5)
    assert not used_slerp
    assert values == [1.5, 0.0]


def test_config_validation():
    cfg = cpift.resolve_config(
        {"suite": {"n_tasks": 2, "input_dim": 4, "classes": 2, "conflict": 0.5}}
    )
    assert cfg["grouping"]["tau"] == 0.1
    with pytest.raises(cpift.Error, match="tau"):
        cpift.resolve_config(
            {"suite": {"n_tasks": 2, "input_dim": 4, "classes": 2, "conflict": 0.5},
             "grouping": {"tau": 1.5}}
        )


def test_pipeline_end_to_end(tmp_path):
    config = {
        "suite": {"n_tasks": 2, "input_dim": 4, "classes": 2, "conflict": 0.5,
                  "train_size": 80, "test_size": 40},
        "model": {"hidden": [6]},
        "core": {"p_percent": 10.0},
        "output_dir": str(tmp_path / "run"),
    }
    record = cpift.run_pipeline(config)
    assert "eval" in record["phases"]
    report = cpift.render_report(tmp_path / "run")
    assert set(report["per_task_accuracy"]) == {"t0", "t1"}
    assert 0.0 <= report["avg_norm_score"] <= 10.0
    assert cpift.render_report(tmp_path / "run", "csv").startswith("model,task")
