"""End-to-end command-line workflow on a miniature corpus."""
import numpy as np
import pytest

from scenekd.cli import main
from scenekd.data import SceneDataset, make_toy_dataset
from scenekd.distill import LogitStore


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("clidata")
    manifest = make_toy_dataset(root, clips_per_cell=1, seed=6, n_scenes=3,
                                n_devices=3, n_unseen=1)
    return manifest


@pytest.fixture(scope="module")
def train_config(tmp_path_factory, corpus):
    cfg = tmp_path_factory.mktemp("cfg") / "train.toml"
    cfg.write_text(f"""
[model]
arch = "cpm"
base_channels = 8

[train]
epochs = 2
batch_size = 4
warmup_epochs = 1
keep_last = 2
seed = 1

[augment]
preset = "noaug"

[data]
manifest = "{corpus}"
""")
    return cfg


@pytest.fixture(scope="module")
def teacher_ckpt(tmp_path_factory, train_config):
    workdir = tmp_path_factory.mktemp("teacher")
    main(["train", "--config", str(train_config), "--workdir", str(workdir)])
    return workdir / "run0" / "epoch_002.dfck"


def test_gen_data_writes_corpus_and_irs(tmp_path, capsys):
    main(["gen-data", "--root", str(tmp_path / "toy"), "--clips-per-cell", "1",
          "--seed", "2", "--with-irs"])
    out = capsys.readouterr().out
    assert "manifest" in out
    ds = SceneDataset(tmp_path / "toy" / "manifest.csv")
    assert len(ds.entries) == 10 * 6 + 10 * 9
    assert len(list((tmp_path / "toy" / "irs").glob("*.wav"))) == 8


def test_count_complexity_table_and_budget(capsys):
    main(["count-complexity", "--arch", "cpm", "--base-channels", "32",
          "--check-budget"])
    out = capsys.readouterr().out
    assert "126240" in out
    assert "within budget" in out


def test_count_complexity_over_budget_exits(capsys):
    with pytest.raises(SystemExit):
        main(["count-complexity", "--arch", "cpm", "--base-channels", "64",
              "--check-budget"])


def test_train_writes_checkpoints(teacher_ckpt, capsys):
    assert teacher_ckpt.exists()
    assert teacher_ckpt.with_name("epoch_001.dfck").exists()


def test_export_evaluate_ensemble_distill(teacher_ckpt, train_config, corpus,
                                          tmp_path, capsys):
    store_path = tmp_path / "teacher.dflg"
    main(["export-logits", "--checkpoint", str(teacher_ckpt),
          "--manifest", str(corpus), "--out", str(store_path)])
    assert "logit rows" in capsys.readouterr().out
    store = LogitStore.load(store_path)
    assert len(store) == 3 * 2 + 3 * 3

    val_path = tmp_path / "val.dflg"
    main(["export-logits", "--checkpoint", str(teacher_ckpt), "--split", "val",
          "--manifest", str(corpus), "--out", str(val_path)])
    assert len(LogitStore.load(val_path)) == 9

    main(["evaluate", "--manifest", str(corpus), "--logits", str(store_path),
          "--checkpoint", str(teacher_ckpt)])
    out = capsys.readouterr().out
    assert out.count("acc=") == 2
    assert "unseen=" in out

    ens_path = tmp_path / "ens.dflg"
    main(["ensemble-logits", str(store_path), str(store_path),
          "--out", str(ens_path)])
    assert "averaged 2 stores" in capsys.readouterr().out
    ens = LogitStore.load(ens_path)
    assert np.array_equal(ens.matrix(ens.ids()), store.matrix(store.ids()))

    sw = tmp_path / "student"
    main(["distill", "--config", str(train_config), "--workdir", str(sw),
          "--teacher-logits", str(store_path), "--epochs", "1"])
    out = capsys.readouterr().out
    assert "aggregate over 1 run(s)" in out
    assert (sw / "run0" / "epoch_001.dfck").exists()


def test_evaluate_needs_a_model_or_store(corpus):
    with pytest.raises(SystemExit, match="checkpoint"):
        main(["evaluate", "--manifest", str(corpus)])


def test_train_needs_a_manifest(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('[train]\nepochs = 1\n')
    with pytest.raises(SystemExit, match="manifest"):
        main(["train", "--config", str(cfg), "--workdir", str(tmp_path / "w")])


def test_matrix_plan_only(tmp_path, capsys):
    cfg = tmp_path / "m.toml"
    cfg.write_text('[teachers]\narchs = ["cpr", "cpm"]\ndg_presets = ["dirfms"]\nseeds = 2\n')
    main(["matrix", "--config", str(cfg), "--workdir", str(tmp_path / "w"),
          "--plan-only"])
    out = capsys.readouterr().out
    assert out.count("teacher ") == 4
    assert "ensemble ens-all  members=4" in out
    assert "student  student-ens-all" in out
    assert "6 jobs total" in out
