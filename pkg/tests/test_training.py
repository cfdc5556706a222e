import csv
import zipfile

import numpy as np
import pytest

from helpers import fork_scenes
from modeseq.config import PRESETS, ConfigError, ModelConfig, TrainConfig, build_configs, read_config_file
from modeseq.features import featurize, marginal_samples
from modeseq.network import ModeSeqNetwork
from modeseq.training import (NumericalError, load_checkpoint, log_columns, save_checkpoint,
                              total_steps, train_network)

MODEL = ModelConfig(hidden_dim=16, n_heads=2, n_layers=2)


def quick(seed=0, steps=4, **train):
    cfg = TrainConfig(seed=seed, max_steps=steps, batch_size=4, **train)
    return cfg, marginal_samples(fork_scenes(8, 1))


def test_same_seed_same_trace_and_parameters():
    cfg, samples = quick()
    a = train_network(samples, MODEL, cfg)
    b = train_network(samples, MODEL, cfg)
    assert a.history == b.history
    sa, sb = a.network.state_dict(), b.network.state_dict()
    assert all(np.array_equal(sa[k], sb[k]) for k in sa)
    c = train_network(samples, MODEL, quick(seed=1)[0])
    assert c.history[0]["total"] != a.history[0]["total"]


def test_step_count_and_epochs():
    assert total_steps(10, TrainConfig(epochs=3, batch_size=4)) == 9
    assert total_steps(10, TrainConfig(max_steps=5)) == 5
    cfg = TrainConfig(epochs=2, batch_size=3)
    res = train_network(marginal_samples(fork_scenes(5, 2)), MODEL, cfg)
    assert [r["epoch"] for r in res.history] == [0, 0, 1, 1]


def test_log_file_columns(tmp_path):
    cfg, samples = quick(steps=3)
    log = tmp_path / "train.csv"
    res = train_network(samples, MODEL, cfg, log_path=log)
    with open(log) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == log_columns(2)
    assert log_columns(1) == ["step", "epoch", "layer0_reg", "layer0_cls", "layer0_rank", "layer0_total",
                              "total", "lr", "grad_norm", "clipped"]
    assert len(rows) == 3
    # logged floats round-trip exactly
    assert [float(r["total"]) for r in rows] == res.column("total").tolist()
    for r in res.history:
        mean = np.mean([r[f"layer{i}_total"] for i in range(2)])
        assert r["total"] == pytest.approx(mean, rel=1e-12)


def test_nan_aborts_with_step():
    cfg, samples = quick()
    net = ModeSeqNetwork(MODEL, seed=0)
    net.decoder.heads[0].loc.fc2.weight.data[:] = np.nan
    with pytest.raises(NumericalError, match="step 0"):
        train_network(samples, MODEL, cfg, network=net)


def test_empty_samples_rejected():
    with pytest.raises(ValueError):
        train_network([], MODEL, TrainConfig())


def test_mean_future_initialisation():
    cfg, samples = quick()
    batch = featurize(samples)
    res = train_network(batch, MODEL, TrainConfig(max_steps=1, lr=1e-12, weight_decay=0.0))
    off = train_network(batch, MODEL, TrainConfig(max_steps=1, init_mean_future=False))
    assert res.history[0]["layer0_reg"] < off.history[0]["layer0_reg"]


def test_checkpoint_bytes_and_round_trip(tmp_path):
    cfg, samples = quick()
    res = train_network(samples, MODEL, cfg)
    a = save_checkpoint(tmp_path / "a.ckpt", res.network, MODEL, cfg, res.optimizer, 4)
    b = save_checkpoint(tmp_path / "b.ckpt", res.network, MODEL, cfg, res.optimizer, 4)
    assert a.read_bytes() == b.read_bytes()
    ck = load_checkpoint(a)
    assert ck.model_config == MODEL and ck.train_config == cfg and ck.step == 4
    want = res.network.state_dict()
    got = ck.network.state_dict()
    assert sorted(want) == sorted(got) and all(np.array_equal(want[k], got[k]) for k in want)
    # the frozen query rows come back too
    assert np.array_equal(ck.network.decoder.bank.extra.data, res.network.decoder.bank.extra.data)
    opt = ck.optimizer().state_dict()
    ref = res.optimizer.state_dict()
    assert all(np.array_equal(opt[k], ref[k]) for k in ref)


def test_final_checkpoint_matches_trained_network(tmp_path):
    cfg, samples = quick(steps=4)
    ck_path = tmp_path / "final.ckpt"
    full = train_network(samples, MODEL, cfg)
    train_network(samples, MODEL, cfg, checkpoint_path=ck_path)
    ck = load_checkpoint(ck_path)
    assert ck.step == 4
    ref = full.network.state_dict()
    assert all(np.array_equal(v, ref[k]) for k, v in ck.network.state_dict().items())


def test_checkpoint_errors(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_text("nope")
    with pytest.raises(ValueError, match="not a readable checkpoint"):
        load_checkpoint(bad)
    with pytest.raises(ValueError, match="not a readable checkpoint"):
        load_checkpoint(tmp_path / "missing.ckpt")
    empty = tmp_path / "empty.ckpt"
    with zipfile.ZipFile(empty, "w") as zf:
        zf.writestr("something.txt", "x")
    with pytest.raises(ValueError, match="no header"):
        load_checkpoint(empty)
    cfg, samples = quick(steps=1)
    res = train_network(samples, MODEL, cfg)
    path = save_checkpoint(tmp_path / "ok.ckpt", res.network, MODEL, cfg)
    with pytest.raises(ValueError, match="dimension mismatch: hidden_dim"):
        load_checkpoint(path, ModelConfig(hidden_dim=32, n_heads=2))
    # variant and rearrangement may differ at load time
    ck = load_checkpoint(path, ModelConfig(hidden_dim=16, n_heads=2, variant="recurrent", rearrange=False))
    assert ck.model_config.variant == "recurrent"


def test_presets_validate():
    for name in PRESETS:
        model, train = build_configs(name)
        assert not model.problems() and not train.problems()
    model, train = build_configs("paper")
    assert (model.hidden_dim, model.n_layers, model.n_heads, model.n_modes) == (128, 6, 8, 6)
    assert (train.lr, train.weight_decay, train.epochs, train.batch_size) == (5e-4, 0.1, 30, 32)
    model, _ = build_configs("desk")
    assert (model.hidden_dim, model.n_layers, model.n_modes) == (64, 2, 6)


def test_config_layers_and_errors(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[model]\nn_layers = 3\nrearrange = off\n[train]\nlr = 0.01\n")
    model, train = build_configs("desk", read_config_file(ini), {"train": {"lr": 0.02, "seed": None}})
    assert model.n_layers == 3 and model.rearrange is False and train.lr == 0.02
    with pytest.raises(ConfigError) as exc:
        build_configs("desk", {"model": {"n_modes": "many", "colour": "red"},
                               "train": {"strategy": "greedy", "delta": 0}})
    text = str(exc.value)
    for part in ("model.n_modes", "model.colour: unknown key", "train.strategy", "train.delta"):
        assert part in text
    with pytest.raises(ConfigError, match="preset"):
        build_configs("huge")
    with pytest.raises(ConfigError, match="multiple of n_heads"):
        build_configs(overrides={"model": {"hidden_dim": 10, "n_heads": 4}})
