"""Map encoder features to a low-dimensional GCD latent space: exact t-SNE and PCA."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .tokenizer import normalize_latent

logger = logging.getLogger(__name__)


@dataclass
class TsneConfig:
    d_out: int = 2
    perplexity: float = 30.0
    iterations: int = 1000
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250
    learning_rate: float | None = None  # None -> max(n / 12, 50)
    momentum_start: float = 0.5
    momentum_final: float = 0.8
    momentum_switch: int = 250
    l2_normalize: bool = True
    min_gain: float = 0.01
    seed: int = 0


@dataclass
class TsneResult:
    embedding: np.ndarray
    kl: float
    kl_initial: float


def pca_reduce(features, d_out: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Project centered data on the top ``d_out`` covariance eigenvectors.

    Returns the projection and the explained-variance ratio of each retained
    component. Eigenvector signs are fixed so the largest-magnitude entry is
    positive.
    """
    x = np.asarray(features, dtype=np.float64)
    n, d = x.shape
    if d_out > min(n, d):
        raise ValueError(f"d_out={d_out} exceeds min(n, d)={min(n, d)}")
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / max(n - 1, 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order]
    # rank-deficient directions carry zero variance; drop their arbitrary basis
    vecs[:, vals <= vals[0] * 1e-12] = 0.0
    flip = np.sign(vecs[np.abs(vecs).argmax(axis=0), np.arange(d)])
    flip[flip == 0] = 1.0
    vecs = vecs * flip
    total = vals.sum()
    ratios = vals[:d_out] / total if total > 0 else np.zeros(d_out)
    return xc @ vecs[:, :d_out], ratios


def _conditional(dist_sq: np.ndarray, beta: float) -> tuple[np.ndarray, float]:
    """Row of p_{j|i} for precision ``beta`` and its Shannon entropy in nats."""
    shifted = dist_sq - dist_sq.min()
    w = np.exp(-shifted * beta)
    s = w.sum()
    p = w / s
    h = math.log(s) + beta * float((shifted * p).sum())
    return p, h


def perplexity_calibrate(dist_sq, target: float, tol: float = 1e-5,
                         max_iter: int = 100) -> tuple[float, np.ndarray]:
    """Bisect the Gaussian bandwidth until the row's perplexity 2^H hits ``target``.

    ``dist_sq`` holds squared distances from point i to the n-1 others.
    Returns ``(sigma, p_row)``.
    """
    dist_sq = np.asarray(dist_sq, dtype=np.float64)
    if not 0 < target < dist_sq.size + 1:
        raise ValueError(f"perplexity {target} must lie in (0, {dist_sq.size + 1})")
    log_target = math.log(target)
    lo, hi = 0.0, math.inf
    beta = 1.0
    p, h = _conditional(dist_sq, beta)
    for _ in range(max_iter):
        if abs(math.exp(h) - target) < tol:
            break
        if h > log_target:
            lo = beta
            beta = beta * 2.0 if hi == math.inf else 0.5 * (beta + hi)
        else:
            hi = beta
            beta = 0.5 * (beta + lo)
        p, h = _conditional(dist_sq, beta)
    else:
        if abs(math.exp(h) - target) >= tol:
            logger.warning("perplexity calibration did not converge (got %.6g, target %.6g)",
                           math.exp(h), target)
    return math.sqrt(1.0 / (2.0 * beta)), p


def joint_probabilities(x: np.ndarray, perplexity: float) -> np.ndarray:
    n = x.shape[0]
    sq = (x * x).sum(1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * x @ x.T, 0.0)
    cond = np.zeros((n, n))
    for i in range(n):
        others = np.r_[0:i, i + 1:n]
        _, cond[i, others] = perplexity_calibrate(d2[i, others], perplexity)
    p = cond + cond.T
    return p / p.sum()


def _q_and_num(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sq = (y * y).sum(1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * y @ y.T, 0.0)
    num = 1.0 / (1.0 + d2)
    np.fill_diagonal(num, 0.0)
    return num / num.sum(), num


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    return float((p[mask] * np.log(p[mask] / np.maximum(q[mask], 1e-300))).sum())


def tsne_reduce(features, cfg: TsneConfig | None = None) -> TsneResult:
    """Exact O(n^2) t-SNE followed by ``normalize_latent``."""
    cfg = cfg or TsneConfig()
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        raise ValueError("t-SNE needs at least two points")
    if not cfg.perplexity < n:
        raise ValueError(f"perplexity {cfg.perplexity} must be smaller than n={n}")
    if cfg.l2_normalize:
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        x = x / np.where(norms > 0, norms, 1.0)
    p = np.maximum(joint_probabilities(x, cfg.perplexity), 1e-12)
    p = p / p.sum()
    np.fill_diagonal(p, 0.0)

    rng = np.random.default_rng(cfg.seed)
    y = rng.normal(0.0, 1e-4, size=(n, cfg.d_out))
    lr = cfg.learning_rate if cfg.learning_rate is not None else max(n / 12.0, 50.0)
    kl0 = kl_divergence(p, _q_and_num(y)[0])
    update = np.zeros_like(y)
    gains = np.ones_like(y)
    for it in range(cfg.iterations):
        exag = cfg.early_exaggeration if it < cfg.exaggeration_iters else 1.0
        mom = cfg.momentum_start if it < cfg.momentum_switch else cfg.momentum_final
        q, num = _q_and_num(y)
        w = (exag * p - q) * num
        grad = 4.0 * (w.sum(axis=1)[:, None] * y - w @ y)
        inc = np.sign(grad) != np.sign(update)
        gains = np.where(inc, gains + 0.2, gains * 0.8)
        np.maximum(gains, cfg.min_gain, out=gains)
        update = mom * update - lr * gains * grad
        y = y + update
        y = y - y.mean(axis=0)
        if not np.all(np.isfinite(y)):
            raise FloatingPointError(f"t-SNE diverged at iteration {it}")
    kl = kl_divergence(p, _q_and_num(y)[0])
    return TsneResult(normalize_latent(y), kl, kl0)
