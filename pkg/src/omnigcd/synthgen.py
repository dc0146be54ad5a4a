"""Synthetic GCD latent spaces: clustered points in [-1, 1]^d with partial labels."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FAMILIES = ("normal", "laplace", "von_mises", "uniform")
MAX_LABEL = 1000


class ConfigError(ValueError):
    pass


@dataclass
class GenConfig:
    d: int = 2
    max_clusters: int = 200
    max_points: int = 3000
    min_clusters: int = 2
    min_points_per_cluster: int = 5
    # cluster std bounds, as a fraction of the sampling-space extent (2.0)
    scale_range: tuple[float, float] = (0.01, 0.08)
    point_mask_range: tuple[float, float] = (0.1, 0.9)
    cluster_mask_range: tuple[float, float] = (0.0, 0.5)
    families: tuple[str, ...] = FAMILIES
    seed: int = 0

    def __post_init__(self):
        self.scale_range = tuple(self.scale_range)
        self.point_mask_range = tuple(self.point_mask_range)
        self.cluster_mask_range = tuple(self.cluster_mask_range)
        self.families = tuple(self.families)

    def validate(self) -> None:
        if self.d < 1:
            raise ConfigError("d must be >= 1")
        if not 1 <= self.min_clusters <= self.max_clusters:
            raise ConfigError("need 1 <= min_clusters <= max_clusters")
        if self.max_clusters > MAX_LABEL - 1:
            raise ConfigError(f"max_clusters must be <= {MAX_LABEL - 1}")
        if self.min_points_per_cluster < 1:
            raise ConfigError("min_points_per_cluster must be >= 1")
        if self.min_clusters * self.min_points_per_cluster > self.max_points:
            raise ConfigError("min_clusters * min_points_per_cluster exceeds max_points")
        for name in ("scale_range", "point_mask_range", "cluster_mask_range"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ConfigError(f"{name} must be a well-ordered non-negative range")
        if self.point_mask_range[1] > 1 or self.cluster_mask_range[1] >= 1:
            raise ConfigError("mask ranges must lie within [0, 1] / [0, 1)")
        unknown = set(self.families) - set(FAMILIES)
        if unknown or not self.families:
            raise ConfigError(f"unknown distribution families: {sorted(unknown)}")


@dataclass
class GcdTask:
    points: np.ndarray
    labels: np.ndarray
    observed: np.ndarray
    cluster_ids: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.observed = np.asarray(self.observed, dtype=bool)
        if self.points.ndim != 2:
            raise ValueError("points must be an n x d matrix")
        n = self.points.shape[0]
        if self.labels.shape != (n,) or self.observed.shape != (n,):
            raise ValueError("labels and observed must have one entry per point")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def old_classes(self) -> set[int]:
        return set(np.unique(self.labels[self.observed]).tolist())

    @property
    def all_classes(self) -> set[int]:
        return set(np.unique(self.labels).tolist())

    @property
    def new_classes(self) -> set[int]:
        return self.all_classes - self.old_classes

    def permuted(self, perm) -> "GcdTask":
        perm = np.asarray(perm)
        return GcdTask(self.points[perm], self.labels[perm], self.observed[perm],
                       None if self.cluster_ids is None else self.cluster_ids[perm])


def sample_cluster(rng: np.random.Generator, family: str, center, scale: float,
                   count: int) -> np.ndarray:
    """Draw ``count`` points around ``center`` and clamp them to [-1, 1]^d."""
    center = np.asarray(center, dtype=np.float64)
    if count < 1:
        raise ValueError("count must be >= 1")
    d = center.shape[0]
    if family == "normal":
        pts = center + rng.normal(0.0, 1.0, size=(count, d)) * scale
    elif family == "laplace":
        # unit-variance Laplace noise
        pts = center + rng.laplace(0.0, 1.0 / np.sqrt(2.0), size=(count, d)) * scale
    elif family == "uniform":
        pts = center + rng.uniform(-1.0, 1.0, size=(count, d)) * scale
    elif family == "von_mises":
        pts = np.repeat(center[None, :], count, axis=0)
        if scale > 0:
            if d == 2:
                basis = np.eye(2)
            elif d > 2:
                q, _ = np.linalg.qr(rng.normal(size=(d, 2)))
                basis = q.T  # orthonormal rows spanning a random 2-plane
            mu = rng.uniform(-np.pi, np.pi)
            theta = rng.vonmises(mu, 1.0 / scale ** 2, size=count)
            r = np.abs(rng.normal(0.0, scale, size=count))
            if d == 1:
                offsets = (r * np.cos(theta))[:, None]
            else:
                offsets = (r * np.cos(theta))[:, None] * basis[0] + (r * np.sin(theta))[:, None] * basis[1]
            pts = pts + offsets
    else:
        raise ConfigError(f"unknown distribution family {family!r}")
    return np.clip(pts, -1.0, 1.0)


def _masked_count(frac: float, count: int) -> int:
    k = int(np.floor(frac * count + 0.5))
    if count >= 2:
        k = min(max(k, 1), count - 1)
    return k


def apply_masking(task: GcdTask, rng: np.random.Generator, point_mask_frac_range,
                  cluster_mask_frac: float) -> GcdTask:
    """Fully hide ``round(cluster_mask_frac * k)`` clusters and partially hide the rest.

    Every partially masked cluster draws its own hidden fraction from
    ``point_mask_frac_range`` (a scalar fixes it). Hidden count is clamped to
    ``[1, count - 1]`` so each remaining cluster keeps at least one labeled and
    one unlabeled point. A zero range with zero cluster masking leaves
    everything observed.
    """
    if np.isscalar(point_mask_frac_range):
        point_mask_frac_range = (float(point_mask_frac_range),) * 2
    lo, hi = point_mask_frac_range
    ids = task.cluster_ids if task.cluster_ids is not None else task.labels
    clusters = np.unique(ids)
    k = len(clusters)
    n_full = int(np.floor(cluster_mask_frac * k + 0.5))
    n_full = min(n_full, k - 1)  # keep one cluster partially observed
    fully = set(rng.choice(clusters, size=n_full, replace=False).tolist()) if n_full else set()
    observed = np.ones(task.n, dtype=bool)
    for c in clusters:
        idx = np.flatnonzero(ids == c)
        if c in fully:
            observed[idx] = False
            continue
        if hi <= 0:
            continue
        frac = rng.uniform(lo, hi)
        hidden = _masked_count(frac, len(idx))
        observed[rng.choice(idx, size=hidden, replace=False)] = False
    if not observed.any():
        raise ConfigError("masking left no observed points")
    return GcdTask(task.points, task.labels, observed, task.cluster_ids)


def generate_task(cfg: GenConfig, seed: int | None = None) -> GcdTask:
    """Generate one masked synthetic task; a pure function of ``cfg`` and ``seed``."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    k_hi = min(cfg.max_clusters, cfg.max_points // cfg.min_points_per_cluster)
    k = int(rng.integers(cfg.min_clusters, k_hi + 1))
    budget = cfg.max_points // k
    labels = rng.choice(np.arange(1, MAX_LABEL + 1), size=k, replace=False)
    lo_c, hi_c = np.log(cfg.min_points_per_cluster), np.log(budget)
    pts, labs = [], []
    for j in range(k):
        family = cfg.families[int(rng.integers(len(cfg.families)))]
        center = rng.uniform(-0.9, 0.9, size=cfg.d)
        scale = rng.uniform(*cfg.scale_range) * 2.0
        count = int(np.floor(np.exp(rng.uniform(lo_c, hi_c))))
        count = min(max(count, cfg.min_points_per_cluster), budget)
        pts.append(sample_cluster(rng, family, center, scale, count))
        labs.append(np.full(count, labels[j], dtype=np.int64))
    labels_all = np.concatenate(labs)
    task = GcdTask(np.concatenate(pts), labels_all, np.ones(len(labels_all), dtype=bool),
                   labels_all.copy())
    # distinct points sample in cluster order; shuffle so order carries no signal
    task = task.permuted(rng.permutation(task.n))
    cluster_frac = rng.uniform(*cfg.cluster_mask_range)
    return apply_masking(task, rng, cfg.point_mask_range, cluster_frac)


def task_seed(base_seed: int, *index: int) -> int:
    """Derive a child seed from a base seed and an index path."""
    return int(np.random.SeedSequence([base_seed, *index]).generate_state(1, dtype=np.uint64)[0])
