"""Turn a GCD latent space into transformer tokens.

Each token is ``[lift(point) | label slice]``: the label slice is the
sinusoidal embedding of the label for observed points and the learnable
masked-label vector for unobserved ones. No positional terms are added.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from . import tensor as T
from .synthgen import ConfigError, GcdTask

if TYPE_CHECKING:
    from .model import GCDformer


@dataclass(frozen=True)
class TokenSpec:
    d_in: int = 2
    d_data: int = 224
    d_label: int = 32
    base: float = 10000.0

    @property
    def d_model(self) -> int:
        return self.d_data + self.d_label

    def validate(self) -> None:
        if self.d_label % 2:
            raise ConfigError("d_label must be even")


@dataclass
class TokenSet:
    tokens: T.Tensor
    observed: np.ndarray
    labels: np.ndarray


def _sinusoid(y: np.ndarray, d_label: int, base: float) -> np.ndarray:
    i = np.arange(d_label // 2)
    freq = 1.0 / base ** (2 * i / d_label)
    angle = np.asarray(y, dtype=np.float64)[..., None] * freq
    out = np.empty(angle.shape[:-1] + (d_label,))
    out[..., 0::2] = np.sin(angle)
    out[..., 1::2] = np.cos(angle)
    return out


def label_embedding(y: int, d_label: int = 32, base: float = 10000.0) -> np.ndarray:
    if y < 1:
        raise ValueError(f"label {y} is not a valid class label; 0 is reserved for masked points")
    if d_label % 2:
        raise ValueError("d_label must be even")
    return _sinusoid(np.asarray(y), d_label, base)


def label_embeddings(labels, d_label: int = 32, base: float = 10000.0) -> np.ndarray:
    """Vectorised ``label_embedding`` over an array of labels (all >= 1)."""
    labels = np.asarray(labels)
    if labels.size and labels.min() < 1:
        raise ValueError("labels must be >= 1; 0 is reserved for masked points")
    return _sinusoid(labels, d_label, base)


def normalize_latent(points) -> np.ndarray:
    """Center on the centroid and divide by the largest absolute coordinate."""
    pts = np.asarray(points, dtype=np.float64)
    out = pts - pts.mean(axis=0)
    m = np.abs(out).max() if out.size else 0.0
    if m == 0:
        return np.zeros_like(out)
    return out / m


def build_tokens(task: GcdTask, model: "GCDformer") -> TokenSet:
    cfg = model.config
    if task.d != cfg.d_in:
        raise ConfigError(f"task dimensionality {task.d} != model d_in {cfg.d_in}")
    p = model.params
    data = T.add(T.matmul(T.Tensor(task.points.astype(p["lift.W"].data.dtype)), p["lift.W"]),
                 p["lift.b"])
    obs = task.observed
    const = np.zeros((task.n, cfg.d_label), dtype=data.data.dtype)
    if obs.any():
        const[obs] = label_embeddings(task.labels[obs], cfg.d_label, cfg.label_base)
    label = T.Tensor(const)
    if not obs.all():
        hidden = (~obs).astype(const.dtype)[:, None]
        label = T.add(label, T.matmul(T.Tensor(hidden), T.take_rows(p["mask_token"], [0])))
    return TokenSet(T.concat_cols([data, label]), obs.copy(), task.labels.copy())
