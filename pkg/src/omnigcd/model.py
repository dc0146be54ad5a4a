"""GCDformer: a non-causal pre-norm transformer over token sets, its loss and trainer."""
from __future__ import annotations

import json
import logging
import math
import struct
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .synthgen import ConfigError, GcdTask, GenConfig, generate_task, task_seed
from .tokenizer import TokenSet, build_tokens

logger = logging.getLogger(__name__)

CKPT_MAGIC = b"GCDF-CKPT"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    n_layers: int = 6
    n_heads: int = 4
    d_model: int = 256
    d_label: int = 32
    d_in: int = 2
    d_out: int = 2
    mlp_ratio: int = 4
    margin: float = 1.0
    label_base: float = 10000.0
    init_std: float = 0.02
    seed: int = 0

    @property
    def d_data(self) -> int:
        return self.d_model - self.d_label

    def validate(self) -> None:
        if self.d_model % self.n_heads:
            raise ConfigError("d_model must be divisible by n_heads")
        if self.d_label % 2 or not 0 < self.d_label < self.d_model:
            raise ConfigError("d_label must be even and smaller than d_model")
        for name in ("n_layers", "n_heads", "d_in", "d_out", "mlp_ratio"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 16
    epochs: int = 8000
    steps_per_epoch: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    checkpoint_every: int = 0  # steps; 0 disables intermediate checkpoints
    seed: int = 0
    gen: GenConfig = field(default_factory=GenConfig)

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch

    def validate(self) -> None:
        for name in ("lr", "batch_size", "steps_per_epoch", "eps"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.epochs < 0 or self.weight_decay < 0 or self.checkpoint_every < 0:
            raise ConfigError("epochs, weight_decay and checkpoint_every must be >= 0")


def param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Parameter names and shapes in checkpoint order."""
    d, hidden = cfg.d_model, cfg.d_model * cfg.mlp_ratio
    shapes = [("lift.W", (cfg.d_in, cfg.d_data)), ("lift.b", (cfg.d_data,)),
              ("mask_token", (cfg.d_label,))]
    for i in range(cfg.n_layers):
        p = f"blocks.{i}."
        shapes += [(p + "ln1.g", (d,)), (p + "ln1.b", (d,))]
        for proj in ("q", "k", "v", "o"):
            shapes += [(p + f"attn.W{proj}", (d, d)), (p + f"attn.b{proj}", (d,))]
        shapes += [(p + "ln2.g", (d,)), (p + "ln2.b", (d,)),
                   (p + "mlp.W1", (d, hidden)), (p + "mlp.b1", (hidden,)),
                   (p + "mlp.W2", (hidden, d)), (p + "mlp.b2", (d,))]
    shapes += [("lnf.g", (d,)), ("lnf.b", (d,)),
               ("head.W", (d, cfg.d_out)), ("head.b", (cfg.d_out,))]
    return shapes


class GCDformer:
    """Model parameters plus the forward pass."""

    def __init__(self, config: ModelConfig, params: dict[str, T.Tensor] | None = None):
        config.validate()
        self.config = config
        if params is None:
            params = self._init_params()
        self.params = params

    def _init_params(self) -> dict[str, T.Tensor]:
        # GPT-2 style N(0, init_std) inside the blocks and for the mask token.
        # The 2-wide lift and the 2-wide head get fan-in scaling instead; at
        # 0.02 they take most of a short run just to reach unit scale.
        rng = np.random.default_rng(self.config.seed)
        dtype = T.get_default_dtype()
        params = {}
        for name, shape in param_shapes(self.config):
            leaf = name.rsplit(".", 1)[-1]
            if leaf == "g":
                data = np.ones(shape)
            elif leaf.startswith("b") and len(shape) == 1:
                data = np.zeros(shape)
            elif name in ("lift.W", "head.W"):
                data = rng.normal(0.0, 1.0 / np.sqrt(shape[0]), size=shape)
            else:
                data = rng.normal(0.0, self.config.init_std, size=shape)
            params[name] = T.Tensor(data.astype(dtype), requires_grad=True, name=name)
        return params

    def parameters(self) -> list[T.Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def copy(self) -> "GCDformer":
        return GCDformer(ModelConfig(**asdict(self.config)),
                         {k: T.Tensor(v.data.copy(), requires_grad=True, name=k)
                          for k, v in self.params.items()})

    def _attention(self, h: T.Tensor, prefix: str) -> T.Tensor:
        p, cfg = self.params, self.config
        q = T.add(T.matmul(h, p[prefix + "Wq"]), p[prefix + "bq"])
        k = T.add(T.matmul(h, p[prefix + "Wk"]), p[prefix + "bk"])
        v = T.add(T.matmul(h, p[prefix + "Wv"]), p[prefix + "bv"])
        dh = cfg.d_model // cfg.n_heads
        heads = []
        for i in range(cfg.n_heads):
            sl = (i * dh, (i + 1) * dh)
            qh, kh, vh = (T.slice_cols(t, *sl) for t in (q, k, v))
            # every token attends to every token: no causal mask
            att = T.softmax_rows(T.scale(T.matmul(qh, T.transpose(kh)), 1.0 / math.sqrt(dh)))
            heads.append(T.matmul(att, vh))
        o = heads[0] if len(heads) == 1 else T.concat_cols(heads)
        return T.add(T.matmul(o, p[prefix + "Wo"]), p[prefix + "bo"])

    def forward(self, tokens: TokenSet | T.Tensor) -> T.Tensor:
        x = tokens.tokens if isinstance(tokens, TokenSet) else tokens
        cfg, p = self.config, self.params
        if x.data.ndim != 2 or x.shape[1] != cfg.d_model:
            raise ConfigError(f"token width {x.shape} does not match d_model={cfg.d_model}")
        for i in range(cfg.n_layers):
            pre = f"blocks.{i}."
            h = T.layer_norm(x, p[pre + "ln1.g"], p[pre + "ln1.b"])
            x = T.add(x, self._attention(h, pre + "attn."))
            h = T.layer_norm(x, p[pre + "ln2.g"], p[pre + "ln2.b"])
            h = T.gelu(T.add(T.matmul(h, p[pre + "mlp.W1"]), p[pre + "mlp.b1"]))
            x = T.add(x, T.add(T.matmul(h, p[pre + "mlp.W2"]), p[pre + "mlp.b2"]))
        x = T.layer_norm(x, p["lnf.g"], p["lnf.b"])
        return T.add(T.matmul(x, p["head.W"]), p["head.b"])

    __call__ = forward


def contrastive_loss(z: T.Tensor, labels, margin: float = 1.0) -> T.Tensor:
    """Mean over unique pairs of d^2 (same label) or max(0, m - d)^2 (different label)."""
    zd = z.data
    n = zd.shape[0]
    if n < 2:
        raise ValueError("contrastive loss needs at least two points")
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    sq = (zd * zd).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (zd @ zd.T), 0.0)
    np.fill_diagonal(d2, 0.0)
    dist = np.sqrt(d2)
    hinge = np.maximum(margin - dist, 0.0)
    per_pair = np.where(same, d2, hinge * hinge)
    n_pairs = n * (n - 1) // 2
    value = np.triu(per_pair, k=1).sum() / n_pairs

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(same, 2.0, np.where(dist > 0, -2.0 * hinge / dist, 0.0))
        np.fill_diagonal(w, 0.0)
        grad = w.sum(axis=1)[:, None] * zd - w @ zd
        return (grad * (g / n_pairs),)

    return T._make(np.asarray(value, dtype=zd.dtype), (z,), backward, "contrastive_loss")


def batch_loss(losses) -> T.Tensor:
    if len(losses) == 0:
        raise ValueError("batch_loss of an empty batch")
    return T.stack_mean(list(losses))


def task_loss(model: GCDformer, task: GcdTask) -> T.Tensor:
    z = model.forward(build_tokens(task, model))
    return contrastive_loss(z, task.labels, model.config.margin)


def transform(model: GCDformer, task: GcdTask) -> np.ndarray:
    """One gradient-free forward pass; observed labels enter only via their tokens."""
    if task.d != model.config.d_in:
        raise ConfigError(f"task dimensionality {task.d} != model d_in {model.config.d_in}")
    # ground-truth labels of unobserved rows never reach the tokens
    visible = GcdTask(task.points, np.where(task.observed, task.labels, 0), task.observed)
    with T.no_grad():
        return model.forward(build_tokens(visible, model)).data.copy()


def make_optimizer(model: GCDformer, tcfg: TrainConfig) -> T.AdamW:
    return T.AdamW(model.parameters(), lr=tcfg.lr, beta1=tcfg.beta1, beta2=tcfg.beta2,
                   eps=tcfg.eps, weight_decay=tcfg.weight_decay)


@dataclass
class TrainResult:
    model: GCDformer
    optimizer: T.AdamW
    losses: list[float]


def train(model: GCDformer, tcfg: TrainConfig, steps: int | None = None,
          optimizer: T.AdamW | None = None,
          on_step: Callable[[int, float, float], None] | None = None,
          checkpoint_path: str | Path | None = None) -> TrainResult:
    """Train on fresh synthetic tasks; every task is seeded by (seed, step, slot).

    Resuming works by passing the optimizer restored from a checkpoint:
    training continues at ``optimizer.step_count``.
    """
    tcfg.validate()
    if tcfg.gen.d != model.config.d_in:
        raise ConfigError(f"gen.d={tcfg.gen.d} does not match model d_in={model.config.d_in}")
    total = tcfg.total_steps if steps is None else steps
    opt = optimizer if optimizer is not None else make_optimizer(model, tcfg)
    losses: list[float] = []
    t0 = time.perf_counter()
    for step in range(opt.step_count, total):
        opt.zero_grad()
        total_loss = 0.0
        for b in range(tcfg.batch_size):
            seed = task_seed(tcfg.seed, step, b)
            loss = task_loss(model, generate_task(tcfg.gen, seed=seed))
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at step {step}, task seed {seed}")
            total_loss += value
            # mean over the batch by per-task gradient accumulation
            T.scale(loss, 1.0 / tcfg.batch_size).backward()
        opt.step()
        mean = total_loss / tcfg.batch_size
        losses.append(mean)
        if on_step is not None:
            on_step(step, mean, time.perf_counter() - t0)
        if checkpoint_path is not None and tcfg.checkpoint_every and \
                (step + 1) % tcfg.checkpoint_every == 0:
            save_checkpoint(model, checkpoint_path, optimizer=opt)
    return TrainResult(model, opt, losses)


# ------------------------------------------------------------------ checkpoints

def save_checkpoint(model: GCDformer, path, optimizer: T.AdamW | None = None) -> None:
    """Write ``GCDF-CKPT`` | u16 version | u32 len | config JSON | f64 params [| optimizer].

    Parameters follow ``param_shapes`` order. The optional optimizer section is
    u8 flag, u64 step, four f64 hyperparameters plus weight decay, then every
    first moment followed by every second moment, in parameter order.
    """
    cfg_bytes = json.dumps(asdict(model.config), sort_keys=True).encode()
    parts = [CKPT_MAGIC, struct.pack("<HI", CKPT_VERSION, len(cfg_bytes)), cfg_bytes]
    for name, _ in param_shapes(model.config):
        parts.append(model.params[name].data.astype("<f8").tobytes())
    if optimizer is None:
        parts.append(struct.pack("<B", 0))
    else:
        parts.append(struct.pack("<BQ5d", 1, optimizer.step_count, optimizer.lr, optimizer.beta1,
                                 optimizer.beta2, optimizer.eps, optimizer.weight_decay))
        parts += [m.astype("<f8").tobytes() for m in optimizer.m]
        parts += [v.astype("<f8").tobytes() for v in optimizer.v]
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path, expected: ModelConfig | None = None,
                    with_optimizer: bool = False):
    """Read a checkpoint; returns the model, or ``(model, optimizer_or_None)``."""
    buf = Path(path).read_bytes()
    if not buf.startswith(CKPT_MAGIC):
        raise CheckpointError(f"{path}: not a GCDF-CKPT file")
    off = len(CKPT_MAGIC)
    version, clen = struct.unpack_from("<HI", buf, off)
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off += 6
    stored = json.loads(buf[off:off + clen].decode())
    off += clen
    known = {f.name for f in fields(ModelConfig)}
    cfg = ModelConfig(**{k: v for k, v in stored.items() if k in known})
    if expected is not None:
        diffs = [f"{k}: checkpoint={getattr(cfg, k)!r} expected={getattr(expected, k)!r}"
                 for k in sorted(known) if k != "seed" and getattr(cfg, k) != getattr(expected, k)]
        if diffs:
            raise CheckpointError("model config mismatch; " + "; ".join(diffs))
    shapes = param_shapes(cfg)
    need = sum(8 * int(np.prod(s)) for _, s in shapes)
    if len(buf) < off + need + 1:
        raise CheckpointError(f"{path}: truncated, expected at least {off + need + 1} bytes, "
                              f"got {len(buf)}")
    params = {}
    dtype = T.get_default_dtype()
    for name, shape in shapes:
        size = int(np.prod(shape))
        arr = np.frombuffer(buf, dtype="<f8", count=size, offset=off).reshape(shape)
        params[name] = T.Tensor(arr.astype(dtype), requires_grad=True, name=name)
        off += 8 * size
    model = GCDformer(cfg, params)
    if not with_optimizer:
        return model
    (flag,) = struct.unpack_from("<B", buf, off)
    off += 1
    if not flag:
        return model, None
    step, lr, b1, b2, eps, wd = struct.unpack_from("<Q5d", buf, off)
    off += struct.calcsize("<Q5d")
    opt = T.AdamW(model.parameters(), lr=lr, beta1=b1, beta2=b2, eps=eps, weight_decay=wd)
    opt.step_count = step
    for store in (opt.m, opt.v):
        for i, p in enumerate(model.parameters()):
            size = p.data.size
            store[i] = np.frombuffer(buf, dtype="<f8", count=size, offset=off) \
                .reshape(p.shape).astype(p.data.dtype)
            off += 8 * size
    return model, opt
