# SPDX-License-Identifier: Apache-2.0
import math

import numpy as np
import pytest

import fod

TINY = """
height = 32
width = 32
n_train = 4
n_test_normal = 3
n_test_anomalous = 3
anomaly_size = 8
proj_dim = 8
d_model = 8
heads = 2
layers = 1
epochs = 2
"""


def test_config_round_trip_and_unknown_key():
    cfg = fod.Config.parse(TINY)
    cfg.set("bank", "coreset")
    assert fod.Config.parse(cfg.to_text()).to_text() == cfg.to_text()
    assert "entropy_reduction" in fod.Config.keys()
    with pytest.raises(fod.ConfigError):
        cfg.set("no_such_key", "1")
    with pytest.raises(fod.FodError):
        fod.Config.parse("epochs = lots")


def test_dataset_shapes_and_labels():
    ds = fod.generate_dataset(fod.Config.parse(TINY))
    assert len(ds["train"]) == 4
    assert ds["test"][0].shape == (1, 32, 32)
    assert ds["labels"] == [0, 0, 0, 1, 1, 1]
    assert ds["kinds"][0] == "none"
    assert all(m.shape == (32, 32) for m in ds["masks"])


def test_features_per_level():
    img = np.random.default_rng(0).uniform(size=(1, 64, 64))
    f8, f16 = fod.extract_features(img, seed=3, proj_dim=16)
    assert f8.shape == (64, 18)
    assert f16.shape == (16, 18)
    again, _ = fod.extract_features(img, seed=3, proj_dim=16)
    np.testing.assert_array_equal(f8, again)
    with pytest.raises(fod.DimensionError):
        fod.extract_features(np.zeros((1, 40, 64)))


def test_auroc_and_combination():
    assert fod.auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)
    with pytest.raises(fod.MetricError):
        fod.auroc([0.1, 0.2], [1, 1])
    rec = np.array([1.0, 2.0, 3.0])
    div = np.array([0.0, 1.0, 2.0])
    soft = np.exp(-div) / np.exp(-div).sum()
    np.testing.assert_allclose(fod.combine_rec_div(rec, div), rec * (1 - soft), rtol=1e-14)


def test_correlation_measures():
    t = fod.target_correlation(3, 3)
    np.testing.assert_allclose(t.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(fod.symmetric_kl(t, t) <= 1e-12)
    u = np.full((2, 3), 1.0 / 3.0)
    assert fod.correlation_entropy(u) == pytest.approx(2 * math.log(3))
    p = np.array([[0.5, 0.5], [0.25, 0.75]])
    q = np.array([[0.25, 0.75], [0.5, 0.5]])
    expect = 0.25 * math.log(3)
    np.testing.assert_allclose(fod.symmetric_kl(p, q), [expect, expect], rtol=1e-12)


def test_coreset_picks_the_far_point():
    pool = np.array([[0.0], [1.0], [2.0], [10.0]])
    assert fod.coreset_indices(pool, 2, 0) == [0, 3]


def test_tensor_bytes_and_files(tmp_path):
    a = np.arange(24, dtype=float).reshape(2, 3, 4) / 7.0
    np.testing.assert_array_equal(fod.decode_tensor(fod.encode_tensor(a)), a)
    path = str(tmp_path / "a.fodt")
    fod.write_tensor(path, a)
    np.testing.assert_array_equal(fod.read_tensor(path), a)
    with pytest.raises(fod.FormatError):
        fod.decode_tensor(b"XXXX")


def test_tiny_pipeline_is_deterministic():
    cfg = fod.Config.parse(TINY)
    epochs = []
    first = fod.run(cfg, on_epoch=lambda level, epoch, l_rec: epochs.append((level, epoch)))
    second = fod.run(cfg)
    assert first["image_auroc"] == second["image_auroc"]
    assert first["image_scores"] == second["image_scores"]
    assert 0.0 <= first["pixel_auroc"] <= 1.0
    assert first["maps"][0].shape == (32, 32)
    assert sorted(set(epochs)) == [(8, 1), (8, 2), (16, 1), (16, 2)]
