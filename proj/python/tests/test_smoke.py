import numpy as np
import pytest

import shapemoire as sm


def rand(*shape, seed=0):
    return np.random.default_rng(seed).random(shape, dtype=np.float32)


def test_metrics():
    a = rand(16, 16, 3)
    assert sm.psnr(a, a) == 100.0
    assert sm.psnr(np.zeros((8, 8, 3), np.float32), np.ones((8, 8, 3), np.float32)) == 0.0
    assert sm.ssim(a, a) == 1.0
    assert sm.lp_proxy(a, a + 0.3) < 1e-6
    with pytest.raises(ValueError):
        sm.psnr(a, rand(8, 8, 3))


def test_formulations_agree_and_fuse():
    x = rand(1, 9, 9, 4, seed=1)
    k = rand(3, 3, 4, 5, seed=2) - 0.5
    ws = sm.identity_shape_weights(3, 3, 4) + 0.1 * (rand(9, 3, 3, 4, seed=3) - 0.5)
    patch = sm.forward_patch(x, k, 1.3, ws, pad=1)
    kern = sm.forward_kernel(x, k, 1.3, ws, pad=1)
    assert np.max(np.abs(patch - kern)) <= 1e-5 * np.max(np.abs(kern))
    fused = sm.conv2d(x, sm.shape_kernel(k, 1.3, ws), pad=1)
    assert np.array_equal(fused, kern)


def test_shape_transform_zero_mean():
    s = sm.shape_transform(rand(2, 8, 8, 3))
    assert np.abs(s.mean(axis=(1, 2))).max() <= 1e-6


def test_network_fusion_and_twin():
    net = sm.DemoireNet(widths=[4, 6, 8], blocks_per_scale=1, layer_kind="shapeconv", seed=3)
    vanilla = sm.DemoireNet(widths=[4, 6, 8], blocks_per_scale=1, layer_kind="vanilla", seed=3)
    x = rand(2, 16, 16, 3, seed=4)
    assert np.array_equal(net.forward(x), vanilla.forward(x))
    fused = net.fuse()
    assert fused.fused and fused.parameter_count == vanilla.parameter_count
    assert np.max(np.abs(fused.forward(x) - net.forward(x))) <= 1e-6
    with pytest.raises(ValueError):
        net.forward(rand(1, 15, 16, 3))


def test_data_and_training(tmp_path):
    clean, moire = sm.make_pair(1, 1, 32)
    assert clean.shape == (32, 32, 3) and 0.0 <= moire.min() and moire.max() <= 1.0
    sm.synthesize_dataset(tmp_path / "data", n_train=4, n_val=2, size=32, seed=0)
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "data = data\nckpt_dir = ckpt\nmodel.layer_kind = shapeconv\nmodel.widths = 4,4,4\n"
        "model.blocks_per_scale = 0\ntrain.shape_arch = true\ntrain.epochs = 2\ntrain.batch_size = 2\n"
    )
    log = sm.train(cfg)
    assert [e["epoch"] for e in log] == [1, 2]
    net = sm.DemoireNet.load(tmp_path / "ckpt" / "model.shpm")
    report = sm.evaluate(net, tmp_path / "data")
    assert report["n_images"] == 2 and report["psnr"] > 0
    with pytest.raises(FileNotFoundError):
        sm.DemoireNet.load(tmp_path / "missing.shpm")


def test_property_suite():
    assert all(r["passed"] for r in sm.check())
