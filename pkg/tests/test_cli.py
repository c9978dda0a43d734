"""Command-line interface tests (invoked in-process via main())."""

import json

import numpy as np
import pytest

from graphode.cli import main
from graphode.data import load_dataset
from graphode.model import LatentDynamicsModel, ModelConfig


def _gen(tmp_path, name="data.bin", samples=3, seed=4, extra=()):
    rc = main(["gen-data", "--system", "spring", "--samples", str(samples),
               "--objects", "3", "--seed", str(seed), "--out", str(tmp_path),
               "--name", name, *extra])
    assert rc == 0
    return tmp_path / name


def _small_ckpt(tmp_path):
    cfg = ModelConfig(hidden=8, latent=3, aux=2, relation_width=6,
                      posterior_hidden=7, densify=2)
    model = LatentDynamicsModel(cfg, seed=0)
    path = tmp_path / "model.ckpt"
    model.save(path)
    return path


def test_gen_data_writes_loadable_dataset(tmp_path, capsys):
    path = _gen(tmp_path)
    assert "wrote 3 spring samples" in capsys.readouterr().out
    ds = load_dataset(path)
    assert len(ds.samples) == 3
    assert ds.header["config"]["system_kind"] == "spring"


def test_gen_data_deterministic(tmp_path):
    a = _gen(tmp_path, "a.bin", seed=6)
    b = _gen(tmp_path, "b.bin", seed=6)
    assert a.read_bytes() == b.read_bytes()


def test_eval_with_baselines(tmp_path, capsys):
    data = _gen(tmp_path)
    ckpt = _small_ckpt(tmp_path)
    rc = main(["eval", "--data", str(data), "--checkpoint", str(ckpt),
               "--ratio", "0.4", "--baselines", "--out", str(tmp_path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "mse " in out and "baseline zero" in out and "baseline locf" in out


def test_matrix_with_checkpoint(tmp_path, capsys):
    train_d = _gen(tmp_path, "train.bin", samples=3, seed=1)
    test_d = _gen(tmp_path, "test.bin", samples=2, seed=2)
    ckpt = _small_ckpt(tmp_path)
    rc = main(["matrix", "--train-data", str(train_d), "--test-data", str(test_d),
               "--checkpoint", str(ckpt), "--ratios", "0.4", "0.8",
               "--plots", "0", "--out", str(tmp_path / "mx")])
    assert rc == 0
    csv = (tmp_path / "mx" / "results.csv").read_text()
    assert csv.splitlines()[0] == "task,ratio,variant,mse,ci,seed"
    assert len(csv.splitlines()) == 3


def test_plot_command(tmp_path):
    data = _gen(tmp_path)
    ckpt = _small_ckpt(tmp_path)
    rc = main(["plot", "--data", str(data), "--checkpoint", str(ckpt),
               "--plots", "1", "--out", str(tmp_path / "figs")])
    assert rc == 0
    pngs = list((tmp_path / "figs").glob("*.png"))
    assert len(pngs) == 1


def test_config_file_merging(tmp_path, capsys):
    cfg = tmp_path / "conf.json"
    cfg.write_text(json.dumps({"system": "spring", "samples": 2, "seed": 11}))
    rc = main(["gen-data", "--config", str(cfg), "--out", str(tmp_path)])
    assert rc == 0
    ds = load_dataset(tmp_path / "dataset.bin")
    assert len(ds.samples) == 2
    # explicit flags win over the config file
    rc = main(["gen-data", "--config", str(cfg), "--samples", "1",
               "--name", "d2.bin", "--out", str(tmp_path)])
    assert rc == 0
    assert len(load_dataset(tmp_path / "d2.bin").samples) == 1


def test_config_file_rejects_unknown_keys(tmp_path):
    cfg = tmp_path / "conf.json"
    cfg.write_text(json.dumps({"bogus_key": 1}))
    with pytest.raises(SystemExit):
        main(["gen-data", "--config", str(cfg), "--out", str(tmp_path)])


def test_output_root_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv("GRAPHODE_OUT", str(tmp_path / "envroot"))
    rc = main(["gen-data", "--samples", "1", "--seed", "0"])
    assert rc == 0
    assert (tmp_path / "envroot" / "dataset.bin").exists()
