"""Run configuration: one YAML document with ``gen``, ``model``, ``train``, ``tsne`` and ``eval`` sections."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .dimred import TsneConfig
from .model import ModelConfig, TrainConfig
from .synthgen import ConfigError, GenConfig


@dataclass
class EvalConfig:
    method: str = "tsne"  # tsne | pca
    kmeans_restarts: int = 10
    labeled_per_class: int | None = None
    n_classes: int | None = None  # None: classes among the unobserved rows
    kl_bins: int = 20
    kl_smoothing: float = 1e-6
    overlap_neighbors: int = 10
    plots: bool = True

    def validate(self) -> None:
        if self.method not in ("tsne", "pca"):
            raise ConfigError(f"eval.method must be 'tsne' or 'pca', got {self.method!r}")


@dataclass
class RunConfig:
    gen: GenConfig = field(default_factory=GenConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    tsne: TsneConfig = field(default_factory=TsneConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        self.train.gen = self.gen

    def set_seed(self, seed: int) -> None:
        for section in (self.gen, self.model, self.train, self.tsne):
            section.seed = seed

    def validate(self) -> None:
        self.gen.validate()
        self.model.validate()
        self.train.validate()
        self.eval.validate()
        if self.gen.d != self.model.d_in:
            raise ConfigError(f"gen.d={self.gen.d} must equal model.d_in={self.model.d_in}")
        if self.eval.method == "tsne" and self.tsne.d_out != self.model.d_in:
            raise ConfigError(f"tsne.d_out={self.tsne.d_out} must equal model.d_in={self.model.d_in}")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            section = asdict(getattr(self, f.name))
            section.pop("gen", None)
            out[f.name] = {k: list(v) if isinstance(v, tuple) else v for k, v in section.items()}
        return out

    @classmethod
    def from_dict(cls, data: dict | None) -> "RunConfig":
        data = dict(data or {})
        types = {f.name: f.default_factory for f in fields(cls)}
        unknown = set(data) - set(types)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        built = {}
        for name, factory in types.items():
            section = data.get(name) or {}
            if not isinstance(section, dict):
                raise ConfigError(f"section {name!r} must be a mapping")
            allowed = {f.name for f in fields(factory())} - {"gen"}
            bad = set(section) - allowed
            if bad:
                raise ConfigError(f"unknown keys in [{name}]: {sorted(bad)}")
            built[name] = factory().__class__(**section)
        return cls(**built)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def save(self, path) -> None:
        Path(path).write_text(self.dump())

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(yaml.safe_load(Path(path).read_text()))


def desk_config(d: int = 2) -> RunConfig:
    """Small configuration that trains in minutes on a laptop CPU."""
    cfg = RunConfig(
        gen=GenConfig(d=d, max_clusters=20, max_points=300),
        model=ModelConfig(n_layers=2, n_heads=4, d_model=64, d_label=16, d_in=d, d_out=d),
        train=TrainConfig(lr=1e-4, batch_size=8, epochs=20, steps_per_epoch=100),
        tsne=TsneConfig(d_out=d),
    )
    return cfg
