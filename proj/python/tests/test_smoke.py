import json

import numpy as np
import pytest

import divdir


def toy_spec():
    return divdir.mlp_spec(6, [12], 3, 1, draws=4)


def toy_data():
    return divdir.gen_synthetic(300, 6, 3, seed=1)


def trained(tmp_path=None):
    ds = toy_data()
    cfg = {"epochs": 12, "batch_size": 25, "learning_rate": 0.02, "seed": 5}
    return divdir.train(ds, toy_spec(), cfg, out_dir=tmp_path or "")


def test_dataset_roundtrip(tmp_path):
    x = np.random.default_rng(0).uniform(size=(5, 4))
    ds = divdir.Dataset(x, [0, 1, 2, 0, 1], 3)
    assert len(ds) == 5
    ds.save(tmp_path / "d.bin", {"note": "smoke"})
    back = divdir.Dataset.load(tmp_path / "d.bin")
    np.testing.assert_array_equal(back.x, x)
    assert back.labels == [0, 1, 2, 0, 1]
    with pytest.raises(ValueError):
        divdir.Dataset(x, [0, 1, 5, 0, 1], 3)


def test_direction_stats_identity():
    rng = np.random.default_rng(3)
    dirs = [rng.normal(size=(7, 20)) for _ in range(10)]
    dirs = [d / np.linalg.norm(d, axis=1, keepdims=True) for d in dirs]
    stats = divdir.direction_stats(dirs)
    stack = np.stack(dirs)
    var_sum = stack.var(axis=0).sum(axis=1)
    omega_m = (stack.mean(axis=0) ** 2).sum(axis=1)
    np.testing.assert_allclose(stats["var_sum"], var_sum, atol=1e-12)
    np.testing.assert_allclose(stats["omega_M"], omega_m, atol=1e-12)
    np.testing.assert_allclose(stats["var_sum"] + stats["omega_M"], 1.0, atol=1e-12)
    np.testing.assert_allclose(stats["omega_S"], -np.abs(stack).sum(axis=2).mean(axis=0), atol=1e-12)


def test_train_predict_attack(tmp_path):
    net, history = trained(tmp_path)
    assert len(history) == 12
    assert history[-1]["train_accuracy"] > 0.9
    assert (tmp_path / "checkpoint.bin").exists()

    ds = toy_data()
    proba = net.predict_proba(ds.x[:10], draws=4, seed=1)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)

    cfg = {"norm": "linf", "eps_max": 0.1, "alpha": 0.02, "steps": 10, "random_start": True, "draws_for_gradient": 4}
    adv = divdir.attack(net, ds.x[:20], ds.labels[:20], cfg, seed=3)
    assert np.abs(adv - ds.x[:20]).max() <= 0.1 + 1e-12
    assert adv.min() >= 0.0 and adv.max() <= 1.0

    clean = divdir.standard_accuracy(ds, net, seed=2, predict_draws=4)
    acc, correct, n = divdir.evaluate_attack(ds, net, cfg, seed=2, predict_draws=4)
    assert n == 300 and correct == round(acc * n)
    assert acc <= clean

    rows = divdir.sweep(ds, net, {"eps": [0.0, 0.02, 0.04, 0.06], "steps": 10, "alpha": 0.01, "draws_for_gradient": 4},
                        seed=2, predict_draws=4)
    assert rows[0]["accuracy"] == clean
    assert all(b["accuracy"] <= a["accuracy"] for a, b in zip(rows, rows[1:]))

    loaded = divdir.Network.load(tmp_path / "checkpoint.bin")
    for a, b in zip(loaded.parameters(), net.parameters()):
        np.testing.assert_array_equal(a, b)
    assert len(divdir.model_id(tmp_path / "checkpoint.bin")) == 16


def test_strict_configs():
    with pytest.raises(ValueError):
        divdir.train(toy_data(), toy_spec(), {"epochs": 1, "penalty": {"lamda_S": 1.0}})
    with pytest.raises(ValueError):
        divdir.train(toy_data(), toy_spec(), {"epochs": 1, "penalty": {"lambda_S": -1.0}})


def test_non_finite_loss():
    x = np.full((20, 6), np.nan)
    ds = divdir.Dataset(x, [0] * 20, 3)
    with pytest.raises(divdir.NonFiniteLoss, match="'nll'"):
        divdir.train(ds, toy_spec(), {"epochs": 1, "batch_size": 10})


def test_run_command(tmp_path):
    cfg = {
        "command": "gen-data",
        "run_dir": str(tmp_path / "gen"),
        "data": {
            "train": {"kind": "synthetic", "count": 50, "features": 4, "classes": 2, "seed": 0},
            "test": {"kind": "synthetic", "count": 20, "features": 4, "classes": 2, "seed": 1},
        },
        "network": divdir.mlp_spec(4, [8], 2, 1, draws=3),
    }
    summary = divdir.run_command(cfg)
    assert json.loads(json.dumps(summary))
    assert len(divdir.Dataset.load(tmp_path / "gen" / "train.bin")) == 50


def test_verify_small():
    reports = divdir.run_verify({"identity_trials": 20, "kl_settings": 2, "kl_samples": 20000,
                                 "projection_runs": 50, "equivalence_inputs": 5, "entropy_samples": 20000})
    names = [r["name"] for r in reports]
    assert any(n.startswith("gradients/") for n in names)
    assert all(r["status"] == "pass" for r in reports), [r for r in reports if r["status"] != "pass"]
