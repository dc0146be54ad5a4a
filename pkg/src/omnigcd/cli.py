"""Command-line interface: ``omnigcd synth|train|dimred|transform|pipeline|eval``."""
from __future__ import annotations

import contextlib
import logging
from pathlib import Path

import click
import numpy as np

from . import io
from .config import RunConfig
from .metrics import write_report
from .model import load_checkpoint, transform as model_transform
from .pipeline import (echo_config, evaluate_task, pipeline, reduce_features, synth,
                       train_run)
from .synthgen import GcdTask


def _limit_threads(n: int | None):
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def _resolve(config_path, seed, labeled_per_class=None, method=None) -> RunConfig:
    cfg = RunConfig.load(config_path) if config_path else RunConfig()
    if seed is not None:
        cfg.set_seed(seed)
    if labeled_per_class is not None:
        cfg.eval.labeled_per_class = labeled_per_class
    if method is not None:
        cfg.eval.method = method
    cfg.validate()
    return cfg


def _read_points(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Points, labels and observed flags from a GCDT file or a GCDV file plus sidecar."""
    head = Path(path).read_bytes()[:4]
    if head == io.GCDT_MAGIC:
        t = io.read_gcdt(path)
        return t.points, t.labels, t.observed
    x, labels, observed = io.read_gcdv(path)
    return x.astype(np.float64), labels, observed


config_opt = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                          help="YAML run configuration.")
seed_opt = click.option("--seed", type=int, default=None, help="Override every seed in the config.")
threads_opt = click.option("--threads", type=int, default=1, show_default=True,
                           help="BLAS threads; 1 is the deterministic reference mode.")
out_opt = click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)


@click.group()
@click.option("-v", "--verbose", is_flag=True)
def main(verbose: bool) -> None:
    """Zero-shot generalized category discovery with a synthetic-trained set transformer."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command("synth")
@config_opt
@seed_opt
@threads_opt
@out_opt
@click.option("--count", type=int, default=1, show_default=True)
def synth_cmd(config_path, seed, threads, out_dir, count):
    """Write COUNT synthetic GCD tasks as GCDT files."""
    cfg = _resolve(config_path, seed)
    with _limit_threads(threads):
        paths = synth(cfg, count, out_dir)
    click.echo(f"wrote {len(paths)} task files to {out_dir}")


@main.command("train")
@config_opt
@seed_opt
@threads_opt
@out_opt
@click.option("--resume", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Continue from a checkpoint written with the same config.")
@click.option("--steps", type=int, default=None,
              help="Stop after this many total steps (default: epochs * steps_per_epoch).")
def train_cmd(config_path, seed, threads, out_dir, resume, steps):
    """Train the model on fresh synthetic tasks."""
    cfg = _resolve(config_path, seed)
    with _limit_threads(threads):
        ckpt = train_run(cfg, out_dir, resume=resume, steps=steps)
    click.echo(f"checkpoint: {ckpt}")


@main.command("dimred")
@config_opt
@seed_opt
@threads_opt
@out_opt
@click.option("--features", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--method", type=click.Choice(["tsne", "pca"]), default=None)
def dimred_cmd(config_path, seed, threads, out_dir, features, method):
    """Reduce a GCDV feature file to a GCD latent space (latent.gcdt)."""
    cfg = _resolve(config_path, seed, method=method)
    x, labels, observed = io.read_gcdv(features)
    with _limit_threads(threads):
        latent = reduce_features(x.astype(np.float64), cfg)
    echo_config(cfg, out_dir)
    path = Path(out_dir) / "latent.gcdt"
    io.write_gcdt(path, GcdTask(latent, labels, observed))
    click.echo(f"latent space: {path}")


@main.command("transform")
@config_opt
@seed_opt
@threads_opt
@out_opt
@click.option("--task", "task_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
def transform_cmd(config_path, seed, threads, out_dir, task_path, checkpoint):
    """Transform a GCDT latent space with a trained checkpoint (transformed.gcdt)."""
    cfg = _resolve(config_path, seed)
    model = load_checkpoint(checkpoint)
    task = io.read_gcdt(task_path)
    with _limit_threads(threads):
        z = model_transform(model, task)
    echo_config(cfg, out_dir)
    path = Path(out_dir) / "transformed.gcdt"
    io.write_gcdt(path, GcdTask(z, task.labels, task.observed))
    click.echo(f"transformed space: {path}")


@main.command("pipeline")
@config_opt
@seed_opt
@threads_opt
@out_opt
@click.option("--features", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Trained model; omit for a baseline-only report.")
@click.option("--labeled-per-class", type=int, default=None)
@click.option("--method", type=click.Choice(["tsne", "pca"]), default=None)
@click.option("--no-transform", is_flag=True, help="Skip the model even if a checkpoint is given.")
def pipeline_cmd(config_path, seed, threads, out_dir, features, checkpoint, labeled_per_class,
                 method, no_transform):
    """Features -> latent space -> transform -> k-means -> report."""
    cfg = _resolve(config_path, seed, labeled_per_class, method)
    x, labels, observed = io.read_gcdv(features)
    model = None
    if checkpoint and not no_transform:
        model = load_checkpoint(checkpoint, expected=None)
    with _limit_threads(threads):
        report = pipeline(x.astype(np.float64), labels, observed, cfg, model, out_dir)
    _echo_summary(report)


@main.command("eval")
@config_opt
@seed_opt
@threads_opt
@out_opt
@click.option("--embeddings", type=click.Path(exists=True, dir_okay=False), required=True,
              help="GCDT file, or GCDV file with its .labels sidecar.")
def eval_cmd(config_path, seed, threads, out_dir, embeddings):
    """Score externally produced embeddings (k-means on the unobserved rows)."""
    cfg = _resolve(config_path, seed)
    pts, labels, observed = _read_points(embeddings)
    with _limit_threads(threads):
        report = evaluate_task(GcdTask(pts, labels, observed), cfg)
    echo_config(cfg, out_dir)
    write_report(report, out_dir)
    _echo_summary(report)


def _echo_summary(report: dict) -> None:
    for name in ("baseline", "transformed"):
        if name in report:
            r = report[name]
            fmt = lambda v: "absent" if v is None else f"{v:.4f}"
            click.echo(f"{name}: all={fmt(r['acc_all'])} old={fmt(r['acc_old'])} "
                       f"new={fmt(r['acc_new'])} ari={r['ari']:.4f} nmi={r['nmi']:.4f}")


if __name__ == "__main__":
    main()
