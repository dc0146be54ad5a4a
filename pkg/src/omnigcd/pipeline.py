"""End-to-end orchestration behind the CLI commands."""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from . import io
from .config import RunConfig
from .dimred import pca_reduce, tsne_reduce
from .metrics import cluster_quality, gcd_metrics, kl_alignment, kmeans, write_report
from .model import (CheckpointError, GCDformer, load_checkpoint, make_optimizer,
                    save_checkpoint, train, transform)
from .synthgen import ConfigError, GcdTask, generate_task, task_seed
from .tokenizer import normalize_latent

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "model.ckpt"
LOSS_LOG_NAME = "loss.log"


def echo_config(cfg: RunConfig, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config.yaml"
    cfg.save(path)
    return path


# ----------------------------------------------------------------- synth/train

def synth(cfg: RunConfig, count: int, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    echo_config(cfg, out_dir)
    paths = []
    for i in range(count):
        task = generate_task(cfg.gen, seed=task_seed(cfg.gen.seed, i))
        path = out_dir / f"task_{i:05d}.gcdt"
        io.write_gcdt(path, task)
        paths.append(path)
    return paths


def train_run(cfg: RunConfig, out_dir, resume=None, steps: int | None = None) -> Path:
    """Train (or resume) and write the checkpoint plus a ``step loss wall_time`` log."""
    cfg.validate()
    out_dir = Path(out_dir)
    echo_config(cfg, out_dir)
    ckpt = out_dir / CHECKPOINT_NAME
    log_path = out_dir / LOSS_LOG_NAME
    if resume is not None:
        model, opt = load_checkpoint(resume, expected=cfg.model, with_optimizer=True)
        if model.config.seed != cfg.model.seed:
            raise CheckpointError(f"model config mismatch; seed: checkpoint={model.config.seed!r} "
                                  f"expected={cfg.model.seed!r}")
        if opt is None:
            raise CheckpointError(f"{resume}: checkpoint has no optimizer state to resume from")
        want = make_optimizer(model, cfg.train)
        for name in ("lr", "beta1", "beta2", "eps", "weight_decay"):
            if getattr(opt, name) != getattr(want, name):
                raise CheckpointError(f"train config mismatch; {name}: checkpoint="
                                      f"{getattr(opt, name)!r} expected={getattr(want, name)!r}")
        mode = "a"
    else:
        model, opt = GCDformer(cfg.model), None
        mode = "w"
    with open(log_path, mode) as log:
        def on_step(step, loss, wall):
            log.write(f"{step + 1} {loss!r} {wall:.3f}\n")
            log.flush()

        result = train(model, cfg.train, steps=steps, optimizer=opt, on_step=on_step,
                       checkpoint_path=ckpt)
    save_checkpoint(model, ckpt, optimizer=result.optimizer)
    return ckpt


# --------------------------------------------------------------------- dimred

def reduce_features(features, cfg: RunConfig) -> np.ndarray:
    d = cfg.model.d_in
    if cfg.eval.method == "pca":
        emb, _ = pca_reduce(features, d)
        return normalize_latent(emb)
    tcfg = cfg.tsne
    if tcfg.d_out != d:
        raise ConfigError(f"tsne.d_out={tcfg.d_out} must equal model.d_in={d}")
    return tsne_reduce(features, tcfg).embedding


def cap_labeled(labels, observed, per_class: int | None, seed: int) -> np.ndarray:
    """Rows kept after subsampling at most ``per_class`` observed rows per class."""
    keep = np.ones(len(labels), dtype=bool)
    if per_class is None:
        return keep
    rng = np.random.default_rng(seed)
    for c in np.unique(labels[observed]):
        idx = np.flatnonzero(observed & (labels == c))
        if len(idx) > per_class:
            drop = rng.choice(idx, size=len(idx) - per_class, replace=False)
            keep[drop] = False
    return keep


# ------------------------------------------------------------------ evaluation

def score_embedding(points, labels, observed, k: int, old_classes, cfg: RunConfig) -> dict:
    """k-means on the unobserved rows, then GCD accuracy and cluster quality."""
    unl = ~observed
    if unl.sum() == 0:
        raise ValueError("no unobserved rows to evaluate")
    k = min(k, int(unl.sum()))
    assign = kmeans(points[unl], k, restarts=cfg.eval.kmeans_restarts, seed=cfg.model.seed)
    report = gcd_metrics(assign.assignments, labels[unl], old_classes).as_dict()
    q = cluster_quality(points[unl], labels[unl], cfg.eval.overlap_neighbors)
    report["quality"] = q.as_dict()
    report["quality"].pop("kl_alignment")
    return report


def synthetic_alignment(latent: np.ndarray, cfg: RunConfig, draws: int = 10) -> float | None:
    """Mean KL(synthetic || latent) over ``draws`` generated tasks (2-D latents only)."""
    if latent.shape[1] != 2 or cfg.gen.d != 2:
        return None
    vals = []
    for i in range(draws):
        syn = generate_task(cfg.gen, seed=task_seed(cfg.gen.seed, 10_000 + i))
        vals.append(kl_alignment(normalize_latent(syn.points), latent,
                                 cfg.eval.kl_bins, cfg.eval.kl_smoothing))
    return float(np.mean(vals))


def evaluate_task(task: GcdTask, cfg: RunConfig, model: GCDformer | None = None,
                  n_classes: int | None = None) -> dict:
    """Baseline and (optionally) transformed scores for one latent-space task."""
    labels, observed = task.labels, task.observed
    old = set(np.unique(labels[observed]).tolist())
    # k = |Y_U|, the classes present among the unobserved rows
    k = n_classes or cfg.eval.n_classes or len(np.unique(labels[~observed]))
    report = {"n_points": task.n, "n_labeled": int(observed.sum()), "k": int(k),
              "baseline": score_embedding(task.points, labels, observed, k, old, cfg)}
    if model is not None:
        z = transform(model, task)
        report["transformed"] = score_embedding(z, labels, observed, k, old, cfg)
        report["_transformed_points"] = z
    return report


def pipeline(features, labels, observed, cfg: RunConfig, model: GCDformer | None = None,
             out_dir=None) -> dict:
    """Dimension reduction, normalisation, optional transform, k-means and scoring."""
    cfg.validate()
    labels = np.asarray(labels, dtype=np.int64)
    observed = np.asarray(observed, dtype=bool)
    if model is not None and model.config.d_in != cfg.model.d_in:
        raise ConfigError(f"checkpoint d_in={model.config.d_in} does not match config "
                          f"model.d_in={cfg.model.d_in}")
    keep = cap_labeled(labels, observed, cfg.eval.labeled_per_class, cfg.model.seed)
    x, labels, observed = np.asarray(features)[keep], labels[keep], observed[keep]
    if len(np.unique(labels)) < 2:
        raise ValueError("pipeline needs at least two classes")
    latent = reduce_features(x, cfg)
    task = GcdTask(latent, labels, observed)
    report = {"method": cfg.eval.method, "d": int(latent.shape[1])}
    scored = evaluate_task(task, cfg, model)
    z = scored.pop("_transformed_points", None)
    report.update(scored)
    report["kl_alignment"] = synthetic_alignment(latent, cfg)
    if out_dir is not None:
        out_dir = Path(out_dir)
        echo_config(cfg, out_dir)
        write_report(report, out_dir)
        io.write_gcdt(out_dir / "latent.gcdt", GcdTask(latent, labels, observed))
        if z is not None:
            io.write_gcdt(out_dir / "transformed.gcdt", GcdTask(z, labels, observed))
        if cfg.eval.plots:
            plot_latents(out_dir, latent, z, labels, observed)
    return report


def plot_latents(out_dir, latent, transformed, labels, observed) -> list[Path]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = []
    panels = [("before", latent)] + ([("after", transformed)] if transformed is not None else [])
    for name, pts in panels:
        fig, ax = plt.subplots(figsize=(5, 5))
        _, codes = np.unique(labels, return_inverse=True)
        ax.scatter(pts[~observed, 0], pts[~observed, 1], c=codes[~observed], cmap="tab20",
                   s=6, marker="o", alpha=0.6)
        ax.scatter(pts[observed, 0], pts[observed, 1], c=codes[observed], cmap="tab20",
                   s=14, marker="x")
        ax.set_title(f"GCD latent space ({name} transform)")
        ax.set_aspect("equal", adjustable="datalim")
        path = Path(out_dir) / f"latent_{name}.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        out.append(path)
    return out
