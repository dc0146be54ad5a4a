"""Clustering and GCD evaluation: k-means, matched accuracy, ARI/NMI, latent-space quality."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist
from scipy.special import xlogy


@dataclass
class ClusterAssignment:
    k: int
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    n_iter: int = 0


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] + (c * c).sum(1)[None, :] - 2.0 * x @ c.T
    return np.maximum(d, 0.0)


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    closest = _sq_dists(x, centers[0][None, :])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.uniform(0, total), side="right"))
            idx = min(idx, n - 1)
        centers.append(x[idx])
        closest = np.minimum(closest, _sq_dists(x, x[idx][None, :])[:, 0])
    return np.array(centers)


def _lloyd(x: np.ndarray, centroids: np.ndarray, max_iter: int, tol: float,
           trace: list | None = None) -> ClusterAssignment:
    k = centroids.shape[0]
    it = 0
    for it in range(1, max_iter + 1):
        d = _sq_dists(x, centroids)
        assign = d.argmin(axis=1)
        if trace is not None:
            trace.append(float(d[np.arange(len(x)), assign].sum()))
        new = np.empty_like(centroids)
        counts = np.bincount(assign, minlength=k)
        for j in range(k):
            if counts[j]:
                new[j] = x[assign == j].mean(axis=0)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            # reseed each empty cluster at the point farthest from its centroid
            dmin = d[np.arange(len(x)), assign].copy()
            for j in empty:
                far = int(dmin.argmax())
                new[j] = x[far]
                dmin[far] = -1.0
        shift = np.sqrt(((new - centroids) ** 2).sum(axis=1)).max()
        centroids = new
        if shift < tol:
            break
    d = _sq_dists(x, centroids)
    assign = d.argmin(axis=1)
    inertia = float(((x - centroids[assign]) ** 2).sum())
    return ClusterAssignment(k, assign, centroids, inertia, it)


def kmeans(points, k: int, restarts: int = 10, seed: int = 0, max_iter: int = 300,
           tol: float = 1e-8) -> ClusterAssignment:
    """k-means++ seeding and Lloyd iterations; the lowest-inertia restart wins."""
    x = np.asarray(points, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must be between 1 and the number of points ({n})")
    best = None
    for rng in (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(restarts)):
        res = _lloyd(x, _kmeans_pp(x, k, rng), max_iter, tol)
        if best is None or res.inertia < best.inertia:
            best = res
    return best


# ------------------------------------------------------------------ accuracy

def contingency(pred, truth) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    p_vals, p_idx = np.unique(pred, return_inverse=True)
    t_vals, t_idx = np.unique(truth, return_inverse=True)
    table = np.zeros((len(p_vals), len(t_vals)), dtype=np.int64)
    np.add.at(table, (p_idx, t_idx), 1)
    return table, p_vals, t_vals


def hungarian_accuracy(pred, truth) -> tuple[float, dict]:
    """Best one-to-one cluster-to-class matching; returns (accuracy, {pred: truth})."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("empty prediction")
    table, p_vals, t_vals = contingency(pred, truth)
    rows, cols = linear_sum_assignment(table, maximize=True)
    mapping = {p_vals[r].item(): t_vals[c].item() for r, c in zip(rows, cols)}
    return float(table[rows, cols].sum()) / pred.size, mapping


@dataclass
class EvalReport:
    acc_all: float
    acc_old: float | None
    acc_new: float | None
    ari: float
    nmi: float
    n_all: int
    n_old: int
    n_new: int

    def as_dict(self) -> dict:
        return asdict(self)


def gcd_metrics(pred, truth, old_classes) -> EvalReport:
    """All/Old/New accuracy under one global matching over the unlabeled set."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if truth.size == 0:
        raise ValueError("gcd_metrics needs at least one unlabeled instance")
    acc_all, mapping = hungarian_accuracy(pred, truth)
    mapped = np.array([mapping.get(p.item(), None) for p in pred], dtype=object)
    correct = mapped == truth.astype(object)
    is_old = np.isin(truth, np.fromiter(old_classes, dtype=np.int64, count=len(old_classes)))
    n_old = int(is_old.sum())
    n_new = int((~is_old).sum())
    acc_old = float(correct[is_old].mean()) if n_old else None
    acc_new = float(correct[~is_old].mean()) if n_new else None
    return EvalReport(acc_all, acc_old, acc_new, ari(pred, truth), nmi(pred, truth),
                      int(truth.size), n_old, n_new)


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1) / 2.0


def ari(pred, truth) -> float:
    table, _, _ = contingency(pred, truth)
    n = table.sum()
    sum_ij = _comb2(table).sum()
    sum_a = _comb2(table.sum(axis=1)).sum()
    sum_b = _comb2(table.sum(axis=0)).sum()
    total = _comb2(n)
    expected = sum_a * sum_b / total if total else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))


def nmi(pred, truth) -> float:
    """Mutual information normalised by the arithmetic mean of the two entropies."""
    table, _, _ = contingency(pred, truth)
    n = table.sum()
    pij = table / n
    pi = pij.sum(axis=1)
    pj = pij.sum(axis=0)
    h_pred = -xlogy(pi, pi).sum()
    h_true = -xlogy(pj, pj).sum()
    if h_pred == 0 and h_true == 0:
        return 1.0
    nz = pij > 0
    mi = (pij[nz] * np.log(pij[nz] / np.outer(pi, pj)[nz])).sum()
    denom = 0.5 * (h_pred + h_true)
    return float(max(mi, 0.0) / denom) if denom > 0 else 0.0


# ------------------------------------------------------------- latent quality

def latent_histogram(points, bins: int = 20, smoothing: float = 1e-6) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[0] == 0:
        raise ValueError("empty point set")
    h, _, _ = np.histogram2d(pts[:, 0], pts[:, 1], bins=bins, range=[[-1, 1], [-1, 1]])
    p = h / h.sum() + smoothing
    return p / p.sum()


def kl_alignment(a, b, bins: int = 20, smoothing: float = 1e-6) -> float:
    """KL(P_a || P_b) between smoothed 2-D occupancy histograms over [-1, 1]^2."""
    p = latent_histogram(a, bins, smoothing)
    q = latent_histogram(b, bins, smoothing)
    return float(max((p * np.log(p / q)).sum(), 0.0))


@dataclass
class QualityReport:
    separation: float
    spread: float
    overlap: float
    kl_alignment: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def cluster_quality(points, labels, k_neighbors: int = 10) -> QualityReport:
    """Centroid separation and spread relative to the data diameter, plus kNN label overlap."""
    x = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    diam = float(pdist(x).max()) if len(x) > 1 else 0.0
    if diam == 0:
        return QualityReport(0.0, 0.0, 0.0)
    cents = np.array([x[labels == c].mean(axis=0) for c in classes])
    spread = float(np.mean([np.linalg.norm(x[labels == c] - cents[i], axis=1).mean()
                            for i, c in enumerate(classes)])) / diam
    if len(classes) < 2:
        return QualityReport(0.0, spread, 0.0)
    separation = float(pdist(cents).mean()) / diam
    k = min(k_neighbors, len(x) - 1)
    _, nbr = cKDTree(x).query(x, k=k + 1)
    # drop self; ties at distance zero may put self later, so mask by index
    nbr = np.asarray(nbr).reshape(len(x), -1)
    others = np.array([[j for j in row if j != i][:k] for i, row in enumerate(nbr)])
    overlap = float((labels[others] != labels[:, None]).mean()) * 100.0
    return QualityReport(separation, spread, overlap)


def write_report(report: dict, out_dir, stem: str = "report") -> tuple[Path, Path]:
    """Write a flat ``key=value`` text record and a JSON file with the same content."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    flat = _flatten(report)
    txt = out_dir / f"{stem}.txt"
    txt.write_text("".join(f"{k}={_fmt(v)}\n" for k, v in flat.items()))
    js = out_dir / f"{stem}.json"
    js.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return txt, js


def _fmt(v) -> str:
    if v is None:
        return "absent"
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out
