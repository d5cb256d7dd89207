"""Experiment-matrix planning, config plumbing, and an end-to-end smoke."""
import dataclasses

import numpy as np
import pytest

from scenekd import config as config_mod
from scenekd import matrix
from scenekd.config import DG_PRESETS, apply_table, dg_params, load_config
from scenekd.harness import TrainSettings


# (preset, role) -> (alpha_fms, p_fms, p_dir)
DG_TABLE = {
    ("dirfms", "teacher"): (0.3, 0.8, 0.4),
    ("fms", "teacher"): (0.3, 0.8, 0.0),
    ("dir", "teacher"): (0.3, 0.0, 0.4),
    ("noaug", "teacher"): (0.3, 0.0, 0.0),
    ("dirfms", "student"): (0.3, 0.4, 0.6),
    ("fms", "student"): (0.3, 0.4, 0.0),
    ("dir", "student"): (0.3, 0.0, 0.6),
    ("noaug", "student"): (0.3, 0.0, 0.0),
}


def test_dg_preset_table():
    for (preset, role), want in DG_TABLE.items():
        assert dg_params(preset, role) == want
    assert set(DG_PRESETS) == {p for p, _ in DG_TABLE}


def test_dg_params_validation():
    with pytest.raises(ValueError, match="preset"):
        dg_params("mixup", "teacher")
    with pytest.raises(ValueError, match="role"):
        dg_params("dirfms", "referee")


def test_apply_table_sets_fields_and_rejects_unknown():
    st = TrainSettings()
    apply_table(st, {"epochs": 3, "lr": 0.01}, "train")
    assert st.epochs == 3
    assert st.lr == 0.01
    with pytest.raises(ValueError, match=r"unknown key 'epoch' in \[train\]"):
        apply_table(st, {"epoch": 3}, "train")


def test_load_config_round_trip(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('[teachers]\narchs = ["cpr"]\nseeds = 2\n\n[student]\nlam = 0.02\n')
    cfg = load_config(p)
    assert cfg["teachers"]["archs"] == ["cpr"]
    assert cfg["teachers"]["seeds"] == 2
    assert cfg["student"]["lam"] == 0.02


def test_plan_default_counts():
    cfg = {"teachers": {"archs": ["cpr", "cpm"], "dg_presets": ["dirfms", "noaug"],
                        "seeds": 3}}
    jobs = matrix.plan(cfg)
    assert len(jobs.teachers) == 12
    assert jobs.teachers[0].name == "cpr16-dirfms-s0"
    assert len(jobs.ensembles) == 1
    assert len(jobs.ensembles[0].members) == 12
    assert len(jobs.students) == 1
    assert jobs.students[0].ensemble == "ens-all"
    assert jobs.jobs == 14


def test_plan_ensemble_cells_select_members():
    cfg = {
        "teachers": {"archs": ["cpr", "cpm"], "dg_presets": ["dirfms", "fms"],
                     "seeds": 2},
        "ensembles": [
            {"name": "cpr-only", "archs": ["cpr"]},
            {"name": "dirfms-only", "dg_presets": ["dirfms"]},
        ],
    }
    jobs = matrix.plan(cfg)
    assert [e.name for e in jobs.ensembles] == ["cpr-only", "dirfms-only"]
    assert len(jobs.ensembles[0].members) == 4   # 1 arch x 2 presets x 2 seeds
    assert len(jobs.ensembles[1].members) == 4   # 2 archs x 1 preset x 2 seeds
    assert all(m.startswith("cpr16-") for m in jobs.ensembles[0].members)
    assert len(jobs.students) == 2


def test_plan_validation():
    with pytest.raises(ValueError, match="at least one"):
        matrix.plan({"teachers": {"seeds": 0}})
    with pytest.raises(ValueError, match="base_channels"):
        matrix.plan({"teachers": {"archs": ["vit"]}})
    with pytest.raises(ValueError, match="untrained teacher"):
        matrix.plan({"teachers": {"archs": ["cpr"]},
                     "ensembles": [{"archs": ["cpm"]}]})
    with pytest.raises(ValueError, match="unique"):
        matrix.plan({"teachers": {"archs": ["cpr"]},
                     "ensembles": [{"name": "a"}, {"name": "a"}]})


def test_result_row_csv_values():
    row = matrix.ResultRow("teacher", "t0", overall_acc=0.5, unseen_acc=None,
                           loss_first=1.25, loss_last=0.5)
    vals = dict(zip(matrix.ResultRow.FIELDS, row.csv_values()))
    assert vals["overall_acc"] == "0.5"
    assert vals["unseen_acc"] == ""
    assert vals["loss_first"] == "1.25"
    assert vals["kind"] == "teacher"


def test_tail_mean():
    assert matrix._tail_mean([0.0, 1.0, 3.0], 2) == 2.0
    assert matrix._tail_mean([1.0, None], 2) is None
    assert matrix._tail_mean([None, 1.0], 1) == 1.0


SMOKE_CONFIG = {
    "data": {"clips_per_cell": 1, "seed": 9, "n_scenes": 3, "n_devices": 3,
             "n_unseen": 1},
    "teachers": {"archs": ["cpr"], "base_channels": {"cpr": 8},
                 "dg_presets": ["noaug"], "seeds": 1, "seed": 4,
                 "train": {"epochs": 2, "batch_size": 4, "warmup_epochs": 1,
                           "keep_last": 2}},
    "student": {"arch": "cpm", "base_channels": 8, "dg_preset": "noaug",
                "lam": 0.02, "tau": 2.0,
                "train": {"epochs": 2, "batch_size": 4, "warmup_epochs": 1,
                          "keep_last": 2, "runs": 1, "seed": 3}},
}


def test_run_matrix_smoke(tmp_path):
    outcome = matrix.run_matrix(SMOKE_CONFIG, tmp_path / "w")
    kinds = [r.kind for r in outcome.rows]
    assert kinds == ["teacher", "ensemble", "student"]
    assert outcome.csv_path.exists()
    assert (tmp_path / "w" / "results.md").exists()
    assert (tmp_path / "w" / "cpr8-noaug-s0.dflg").exists()
    assert (tmp_path / "w" / "ens-all.dflg").exists()
    header = outcome.csv_path.read_text().splitlines()[0]
    assert header == ",".join(matrix.ResultRow.FIELDS)
    # per-job details are kept for downstream analysis
    assert list(outcome.teacher_results) == ["cpr8-noaug-s0"]
    (tr,) = outcome.student_results.values()
    assert len(tr.eval_overall) == 2   # 1 run x keep_last 2
    assert tr.overall_acc == pytest.approx(float(np.mean(tr.eval_overall)))


def test_run_matrix_is_reproducible(tmp_path):
    a = matrix.run_matrix(SMOKE_CONFIG, tmp_path / "a")
    b = matrix.run_matrix(SMOKE_CONFIG, tmp_path / "b")
    assert a.csv_path.read_bytes() == b.csv_path.read_bytes()
