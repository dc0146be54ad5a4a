import numpy as np
import pytest
from scipy import stats

from omnigcd.synthgen import (FAMILIES, ConfigError, GcdTask, GenConfig, apply_masking,
                              generate_task, sample_cluster, task_seed)


@pytest.mark.parametrize("family", FAMILIES)
def test_zero_scale_collapses_to_center(family):
    rng = np.random.default_rng(0)
    pts = sample_cluster(rng, family, [0.2, -0.3], 0.0, 25)
    assert np.all(pts == np.array([0.2, -0.3]))


def test_normal_mean_concentrates():
    rng = np.random.default_rng(1)
    scale, count = 0.05, 20000
    pts = sample_cluster(rng, "normal", [0.1, -0.1], scale, count)
    assert np.all(np.abs(pts.mean(axis=0) - [0.1, -0.1]) < 4 * scale / np.sqrt(count))


def test_uniform_support():
    rng = np.random.default_rng(2)
    pts = sample_cluster(rng, "uniform", [0.95, 0.0], 0.2, 1000)
    assert np.all(pts[:, 0] >= 0.75) and np.all(pts[:, 0] <= 1.0)
    assert np.all(np.abs(pts[:, 1]) <= 0.2)


@pytest.mark.parametrize("d", [1, 2, 5])
def test_von_mises_any_dimension(d):
    pts = sample_cluster(np.random.default_rng(3), "von_mises", np.zeros(d), 0.1, 200)
    assert pts.shape == (200, d) and np.all(np.abs(pts) <= 1)
    assert np.linalg.norm(pts, axis=1).mean() < 0.3


def test_unknown_family():
    with pytest.raises(ConfigError):
        sample_cluster(np.random.default_rng(0), "cauchy", [0, 0], 0.1, 3)


def test_generate_is_deterministic():
    cfg = GenConfig(max_clusters=30, max_points=500, seed=11)
    a, b = generate_task(cfg), generate_task(cfg)
    assert np.array_equal(a.points, b.points) and np.array_equal(a.labels, b.labels)
    assert np.array_equal(a.observed, b.observed)
    c = generate_task(cfg, seed=12)
    assert a.n != c.n or not np.array_equal(a.points, c.points)


def test_fixed_cluster_count():
    t = generate_task(GenConfig(min_clusters=3, max_clusters=3, max_points=100, seed=4))
    assert len(t.all_classes) == 3


def check_invariants(t: GcdTask, cfg: GenConfig):
    assert np.all(np.abs(t.points) <= 1.0)
    assert t.labels.min() >= 1 and t.labels.max() <= 1000
    assert t.old_classes <= t.all_classes
    assert t.observed.any() and (~t.observed).any()
    assert t.n <= cfg.max_points
    # one label per cluster
    assert len(np.unique(t.cluster_ids)) == len(t.all_classes)


def test_task_invariants_and_uniform_cluster_count():
    cfg = GenConfig(min_clusters=2, max_clusters=9, max_points=120, seed=0)
    counts = np.zeros(8, dtype=int)
    for i in range(10_000):
        t = generate_task(cfg, seed=task_seed(5, i))
        check_invariants(t, cfg)
        counts[len(t.all_classes) - 2] += 1
    chi2 = stats.chisquare(counts)
    assert chi2.pvalue > 0.01


def test_default_config_invariants():
    cfg = GenConfig()
    for i in range(5):
        check_invariants(generate_task(cfg, seed=i), cfg)


def test_config_errors():
    with pytest.raises(ConfigError):
        generate_task(GenConfig(min_clusters=5, max_clusters=4))
    with pytest.raises(ConfigError):
        generate_task(GenConfig(min_clusters=10, min_points_per_cluster=10, max_points=50))
    with pytest.raises(ConfigError):
        generate_task(GenConfig(max_clusters=1000))


def _plain_task(sizes):
    labels = np.concatenate([np.full(s, i + 1) for i, s in enumerate(sizes)])
    return GcdTask(np.zeros((len(labels), 2)), labels, np.ones(len(labels), bool), labels)


def test_no_masking_keeps_everything_observed():
    t = apply_masking(_plain_task([5, 7]), np.random.default_rng(0), 0.0, 0.0)
    assert t.observed.all() and t.old_classes == t.all_classes


def test_masking_one_of_two_clusters():
    t = apply_masking(_plain_task([5, 7]), np.random.default_rng(0), 0.0, 0.5)
    assert len(t.old_classes) == 1 and len(t.all_classes) == 2


def test_masking_never_hides_everything():
    for s in range(50):
        t = apply_masking(_plain_task([4, 4, 4]), np.random.default_rng(s), 0.9, 0.9)
        assert t.observed.any()


def test_partial_mask_fraction_bookkeeping():
    rng = np.random.default_rng(7)
    for i in range(1000):
        sizes = rng.integers(2, 40, size=rng.integers(2, 6))
        frac = rng.uniform(0.1, 0.9)
        t = apply_masking(_plain_task(sizes), rng, frac, 0.0)
        for c, size in enumerate(sizes, start=1):
            hidden = int((~t.observed[t.labels == c]).sum())
            # off by at most rounding plus the keep-one-on-each-side clamp
            assert abs(hidden - frac * size) <= 1.0
