import json
import math

import numpy as np
import pytest

import sliceforge as sf


def test_matmul_and_tensor_roundtrip(tmp_path):
    a = np.array([[1, 2], [3, 4]], dtype=np.float32)
    b = np.array([[5, 6], [7, 8]], dtype=np.float32)
    np.testing.assert_array_equal(sf.matmul(a, b), [[19, 22], [43, 50]])
    path = tmp_path / "t.tsr"
    x = np.random.default_rng(0).random((2, 3, 4)).astype(np.float32)
    sf.tensor_write(path, x)
    assert path.read_bytes()[:4] == b"TSR1"
    np.testing.assert_array_equal(sf.tensor_read(path), x)


def test_sepconv_identity():
    x = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
    dw = np.zeros((1, 1, 3, 3), dtype=np.float32)
    dw[0, 0, 1, 1] = 1
    y = sf.sepconv2d(x, dw, np.ones((1, 1, 1, 1), np.float32), np.zeros(1, np.float32))
    np.testing.assert_array_equal(y, x)
    with pytest.raises(sf.InvalidArgument):
        sf.sepconv2d(x, dw, np.ones((1, 1, 1, 1), np.float32), np.zeros(1, np.float32), padding="full")


def test_model_forward_and_save(tmp_path):
    cfg = sf.ModelConfig()
    cfg.input_height = cfg.input_width = 16
    model = sf.build_model(cfg, seed=3)
    assert model.parameter_count() == sf.parameter_count(cfg)
    batch = np.random.default_rng(1).random((3, 1, 16, 16)).astype(np.float32)
    probs = model.forward(batch)
    assert probs.shape == (3,)
    assert np.all((probs > 0) & (probs < 1))
    assert model.predict(batch) == [int(p >= 0.5) for p in probs]
    model.save(tmp_path / "m.sfm")
    np.testing.assert_array_equal(sf.load_model(tmp_path / "m.sfm").forward(batch), probs)
    assert model.activation(batch[:1], 0, 7).shape == (16, 16)
    image, trace = model.maximize(2, 1, steps=3, seed=4)
    assert image.shape == (1, 1, 16, 16) and len(trace) == 4


def test_invalid_config():
    cfg = sf.ModelConfig()
    cfg.input_height = cfg.input_width = 8
    with pytest.raises(sf.InvalidArgument):
        sf.build_model(cfg)


def test_metrics():
    m = sf.compute_metrics(tp=45, fp=5, tn=45, fn=5)
    assert m["accuracy"] == pytest.approx(0.9)
    assert m["f1"] == pytest.approx(0.9)
    assert m["mcc"] == pytest.approx(0.8)
    assert sf.confusion([1, 0, 1, 0], [1, 1, 0, 0]) == {"tp": 1, "fp": 1, "tn": 1, "fn": 1}
    assert sf.format_mean_std(0.6298, 0.0122) == "0.6298±0.0122"
    assert sf.format_percent(0.7445) == "74.45%"


def test_clip_and_loss():
    rng = np.random.default_rng(2)
    grads = [rng.normal(scale=10, size=n).astype(np.float32) for n in (5, 17, 3)]
    clipped = sf.clip_gradients(grads, 0.5, 1.0)
    assert max(np.abs(g).max() for g in clipped) <= 0.5
    assert math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in clipped)) <= 1.0 + 1e-6
    loss, grad = sf.bce_loss(np.zeros(2, np.float32), [0, 1])
    assert loss == pytest.approx(math.log(2))
    np.testing.assert_allclose(grad, [0.25, -0.25])


def test_split_and_leakage(tmp_path):
    manifest = sf.generate_synthetic(4, 3, 9, 9, 0, tmp_path / "data")
    assert len(manifest.subject_ids) == 8 and manifest.total_slices() == 24
    plan = sf.kfold_split(manifest, 2, seed=1, stratified=True)
    for fold in plan.folds:
        assert not set(fold.train_ids) & set(fold.val_ids)
    assert sf.audit_split(plan, manifest)["leakage"] is False
    leaky = sf.kfold_split(manifest, 2, seed=1, granularity="slice")
    assert sf.audit_split(leaky, manifest)["leaked_subject_ids"]


def test_cli_run(tmp_path):
    code, out, _ = sf.run_cli(["generate", "-o", str(tmp_path / "d"), "--per-class", "4", "--slices", "2",
                               "--height", "9", "--width", "9"])
    assert code == 0 and "manifest.json" in out
    manifest = str(tmp_path / "d" / "manifest.json")
    code, out, _ = sf.run_cli(["run", "--manifest", manifest, "-o", str(tmp_path / "r"), "--epochs", "1",
                               "--batch-size", "4"])
    assert code == 0 and "Fold-1" in out
    summary = json.loads((tmp_path / "r" / "summary.json").read_text())
    assert len(summary["folds"]) == 2
    code, _, err = sf.run_cli(["run", "--manifest", manifest, "-o", str(tmp_path / "x"), "--granularity", "slice"])
    assert code == 3 and "leaks" in err
    assert sf.run_cli(["bogus"])[0] == 1
