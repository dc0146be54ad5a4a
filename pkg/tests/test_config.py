import pytest

from omnigcd.config import RunConfig, desk_config
from omnigcd.synthgen import ConfigError


def test_yaml_roundtrip(tmp_path):
    cfg = desk_config(8)
    cfg.set_seed(42)
    path = tmp_path / "c.yaml"
    cfg.save(path)
    back = RunConfig.load(path)
    assert back.to_dict() == cfg.to_dict()
    assert back.train.gen is back.gen
    assert back.gen.scale_range == cfg.gen.scale_range


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown keys in \\[model\\]"):
        RunConfig.from_dict({"model": {"d_modle": 64}})
    with pytest.raises(ConfigError, match="unknown config sections"):
        RunConfig.from_dict({"optim": {}})


def test_dimension_consistency():
    cfg = RunConfig.from_dict({"gen": {"d": 8}})
    with pytest.raises(ConfigError, match="gen.d=8"):
        cfg.validate()
    cfg = RunConfig.from_dict({"gen": {"d": 8}, "model": {"d_in": 8, "d_out": 8}})
    with pytest.raises(ConfigError, match="tsne.d_out"):
        cfg.validate()
    cfg.eval.method = "pca"
    cfg.validate()


def test_invalid_values():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"gen": {"point_mask_range": [0.5, 0.2]}}).validate()
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"model": {"d_model": 66, "n_heads": 4}}).validate()
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"eval": {"method": "umap"}}).validate()


def test_empty_document_gives_defaults():
    assert RunConfig.from_dict(None).to_dict() == RunConfig().to_dict()
