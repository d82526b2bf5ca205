import math

import numpy as np
import pytest

import cpga


def small_run_config():
    cfg = cpga.RunConfig()
    cfg.shift = cpga.rotated_gaussians_benchmark(1)
    cfg.shift.samples_per_class = 20
    t = cfg.train
    t.pretrain_epochs = 5
    t.stage1_epochs = 5
    t.stage2_epochs = 3
    t.feature_dim = 8
    t.noise_dim = 8
    t.seed = 1
    cfg.train = t
    return cfg


def test_domains_shapes_and_labels():
    shift = cpga.rotated_gaussians_benchmark(3)
    src, tgt = cpga.make_gaussian_domains(shift)
    assert src["features"].shape == (8 * shift.samples_per_class, 16)
    assert tgt["domain"] == "target"
    assert set(src["labels"]) == set(range(8))


def test_losses_match_closed_forms():
    v = np.eye(4)
    u = np.zeros((2, 4))
    u[:, 0] = 1.0
    assert cpga.weighted_contrastive(u, v, [0, 1], [0.0, 0.0]) == 0.0
    o = np.array([[0.5, 0.5]])
    h = np.array([[1.0, 0.0]])
    assert cpga.elr(o, h) == pytest.approx(math.log(0.5))
    assert cpga.elr(o, np.zeros((1, 2))) == 0.0
    assert cpga.neighborhood_clustering(np.full((1, 4), 0.25)) == pytest.approx(math.log(4))
    p = cpga.nonparametric_predict(np.eye(3)[:1], np.eye(3), 1.0)
    assert p.sum() == pytest.approx(1.0)


def test_pseudo_labels_tie_rule_and_empty_class():
    c = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    assert cpga.assign_labels(np.array([[1.0, 1.0], [2.0, 0.0]]), c) == [0, 0]
    q = np.array([[1.0, 2.0], [3.0, 4.0]])
    fresh = cpga.refresh_centroids(q, [0, 0], c)
    np.testing.assert_allclose(fresh[0], [2.0, 3.0])
    np.testing.assert_array_equal(fresh[1:], c[1:])


def test_config_errors_surface_as_value_errors():
    with pytest.raises(ValueError, match="lamda"):
        cpga.parse_run_config('{"train": {"lamda": 1}}')
    t = cpga.TrainConfig()
    t.tau = 0.0
    with pytest.raises(cpga.ConfigError):
        t.validate()


def test_label_noise_rate():
    labels = [i % 5 for i in range(1000)]
    noisy = cpga.inject_label_noise(labels, 5, 0.3, 7)
    changed = sum(a != b for a, b in zip(labels, noisy))
    assert changed == 300


def test_small_pipeline_is_deterministic():
    cfg = small_run_config()
    a = cpga.run(cfg)
    b = cpga.run(cfg)
    assert a["metrics_csv"] == b["metrics_csv"]
    assert 0.0 <= a["adapted_accuracy"] <= 1.0
    assert len(a["pseudo_labels"]) == 8 * 20
    assert all(0.0 <= w <= 1.0 for w in a["weights"])
