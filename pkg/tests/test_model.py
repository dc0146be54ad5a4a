import itertools
import math

import numpy as np
import pytest

from omnigcd import tensor as T
from omnigcd.model import (CheckpointError, GCDformer, ModelConfig, TrainConfig, batch_loss,
                           contrastive_loss, load_checkpoint, param_shapes, save_checkpoint,
                           task_loss, train, transform)
from omnigcd.synthgen import ConfigError, GcdTask, GenConfig
from omnigcd.tokenizer import build_tokens

TINY = dict(n_layers=2, n_heads=2, d_model=16, d_label=4, seed=7)


def brute_force_loss(z, labels, m):
    total, count = 0.0, 0
    for j, k in itertools.combinations(range(len(z)), 2):
        d = math.sqrt(sum((a - b) ** 2 for a, b in zip(z[j], z[k])))
        total += d * d if labels[j] == labels[k] else max(0.0, m - d) ** 2
        count += 1
    return total / count


def loss_value(z, labels, m=1.0):
    return contrastive_loss(T.tensor(z), labels, m).item()


def test_loss_examples():
    assert loss_value(np.zeros((4, 2)), [1, 1, 1, 1]) == 0.0
    assert loss_value(np.zeros((2, 2)), [1, 2]) == 1.0
    assert loss_value(np.zeros((3, 2)), [5, 5, 9]) == 2 / 3


def test_loss_needs_two_points():
    with pytest.raises(ValueError):
        loss_value(np.zeros((1, 2)), [1])


def test_loss_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(60):
        n = int(rng.integers(2, 31))
        z = rng.normal(scale=0.7, size=(n, int(rng.integers(1, 4))))
        labels = rng.integers(0, 4, size=n)
        m = float(rng.uniform(0.2, 2.0))
        assert abs(loss_value(z, labels, m) - brute_force_loss(z, labels, m)) < 1e-12


def test_loss_invariant_to_relabeling():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(12, 2))
    labels = rng.integers(1, 5, size=12)
    relabel = {1: 900, 2: 3, 3: 41, 4: 7}
    assert loss_value(z, labels) == loss_value(z, [relabel[y] for y in labels])


def test_loss_gradient():
    rng = np.random.default_rng(2)
    z = T.Tensor(rng.normal(scale=0.4, size=(4, 2)), requires_grad=True)
    labels = [1, 1, 2, 3]
    assert T.gradient_check(lambda: contrastive_loss(z, labels, 1.0), [z]) < 1e-5


def test_batch_loss():
    losses = [T.tensor(0.0), T.tensor(2.0)]
    assert batch_loss(losses).item() == 1.0
    assert batch_loss([T.tensor(0.37)]).item() == 0.37
    vals = np.random.default_rng(3).uniform(size=16)
    assert batch_loss([T.tensor(v) for v in vals]).item() == pytest.approx(sum(vals) / 16, abs=1e-15)
    with pytest.raises(ValueError):
        batch_loss([])


def random_task(n, seed=0, d=2):
    rng = np.random.default_rng(seed)
    obs = rng.random(n) < 0.5
    obs[0], obs[-1] = True, False
    return GcdTask(rng.uniform(-1, 1, (n, d)), rng.integers(1, 4, n), obs)


def test_forward_permutation_equivariance():
    m = GCDformer(ModelConfig(**TINY))
    t = random_task(10)
    perm = np.random.default_rng(5).permutation(10)
    a = transform(m, t)[perm]
    b = transform(m, t.permuted(perm))
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-14)


def test_identical_tokens_identical_outputs():
    m = GCDformer(ModelConfig(**TINY))
    t = GcdTask([[0.2, 0.2], [0.2, 0.2], [-0.5, 0.1]], [2, 2, 3], [True, True, False])
    z = transform(m, t)
    assert np.array_equal(z[0], z[1])


def test_single_token_closed_form():
    m = GCDformer(ModelConfig(**TINY))
    t = GcdTask([[0.4, -0.1]], [3], [True])
    p = {k: v.data for k, v in m.params.items()}

    def ln(x, g, b):
        return (x - x.mean()) / np.sqrt(x.var() + 1e-5) * g + b

    def gelu(x):
        return 0.5 * x * (1 + np.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x ** 3)))

    x = build_tokens(t, m).tokens.data[0]
    for i in range(TINY["n_layers"]):
        q = f"blocks.{i}."
        h = ln(x, p[q + "ln1.g"], p[q + "ln1.b"])
        v = h @ p[q + "attn.Wv"] + p[q + "attn.bv"]  # softmax over one key is 1
        x = x + v @ p[q + "attn.Wo"] + p[q + "attn.bo"]
        h = ln(x, p[q + "ln2.g"], p[q + "ln2.b"])
        x = x + gelu(h @ p[q + "mlp.W1"] + p[q + "mlp.b1"]) @ p[q + "mlp.W2"] + p[q + "mlp.b2"]
    out = ln(x, p["lnf.g"], p["lnf.b"]) @ p["head.W"] + p["head.b"]
    np.testing.assert_allclose(transform(m, t)[0], out, rtol=1e-12, atol=1e-14)


def test_forward_width_mismatch():
    m = GCDformer(ModelConfig(**TINY))
    with pytest.raises(ConfigError):
        m.forward(T.tensor(np.zeros((3, 15))))
    with pytest.raises(ConfigError):
        transform(m, random_task(4, d=3))


def test_config_validation():
    with pytest.raises(ConfigError):
        GCDformer(ModelConfig(d_model=30, n_heads=4))
    with pytest.raises(ConfigError):
        GCDformer(ModelConfig(d_label=3))


def test_parameter_count_is_config_function():
    cfg = ModelConfig(**TINY)
    assert GCDformer(cfg).num_parameters() == sum(int(np.prod(s)) for _, s in param_shapes(cfg))
    d, hdn = 16, 64
    per_layer = 4 * d + 4 * (d * d + d) + d * hdn + hdn + hdn * d + d
    assert GCDformer(cfg).num_parameters() == 2 * 12 + 12 + 4 + 2 * per_layer + 2 * d + d * 2 + 2


def test_full_model_gradient():
    m = GCDformer(ModelConfig(**TINY))
    t = random_task(6, seed=4)
    assert T.gradient_check(lambda: task_loss(m, t), m.parameters(), max_entries=8) < 1e-4


def test_transform_is_pure():
    m = GCDformer(ModelConfig(**TINY))
    t = random_task(7)
    before = {k: v.data.copy() for k, v in m.params.items()}
    a, b = transform(m, t), transform(m, t)
    assert np.array_equal(a, b)
    assert all(np.array_equal(before[k], v.data) for k, v in m.params.items())


def test_transform_ignores_hidden_labels():
    m = GCDformer(ModelConfig(**TINY))
    t = random_task(9)
    other = GcdTask(t.points, np.where(t.observed, t.labels, 777), t.observed)
    assert np.array_equal(transform(m, t), transform(m, other))


def small_train_cfg(steps, seed=0):
    gen = GenConfig(max_clusters=4, max_points=40)
    return TrainConfig(lr=1e-3, batch_size=2, epochs=1 if steps else 0, steps_per_epoch=max(steps, 1),
                       gen=gen, seed=seed)


def test_zero_steps_keeps_initialisation():
    m = GCDformer(ModelConfig(**TINY))
    ref = GCDformer(ModelConfig(**TINY))
    res = train(m, small_train_cfg(0))
    assert res.losses == []
    assert all(np.array_equal(ref.params[k].data, v.data) for k, v in m.params.items())


def test_training_is_deterministic(tmp_path):
    paths = []
    for i in range(2):
        m = GCDformer(ModelConfig(**TINY))
        res = train(m, small_train_cfg(5))
        paths.append(tmp_path / f"m{i}.ckpt")
        save_checkpoint(m, paths[-1], optimizer=res.optimizer)
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_nan_loss_aborts():
    m = GCDformer(ModelConfig(**TINY))
    m.params["head.W"].data[...] = np.nan
    with pytest.raises(Exception, match="step 0, task seed"):
        train(m, small_train_cfg(1))


def test_checkpoint_roundtrip(tmp_path):
    m = GCDformer(ModelConfig(**TINY))
    res = train(m, small_train_cfg(2))
    path = tmp_path / "m.ckpt"
    save_checkpoint(m, path, optimizer=res.optimizer)
    m2, opt = load_checkpoint(path, with_optimizer=True)
    for k, v in m.params.items():
        assert np.array_equal(v.data, m2.params[k].data)
    assert opt.step_count == 2
    for a, b in zip(res.optimizer.m + res.optimizer.v, opt.m + opt.v):
        assert np.array_equal(a, b)
    t = random_task(8)
    assert np.array_equal(transform(m, t), transform(m2, t))
    save_checkpoint(m2, tmp_path / "again.ckpt", optimizer=opt)
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()


def test_checkpoint_mismatch_names_field(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(GCDformer(ModelConfig(**TINY)), path)
    with pytest.raises(CheckpointError, match="d_model"):
        load_checkpoint(path, expected=ModelConfig(**{**TINY, "d_model": 32}))


def test_checkpoint_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(GCDformer(ModelConfig(**TINY)), path)
    buf = path.read_bytes()
    (tmp_path / "bad.ckpt").write_bytes(b"X" + buf[1:])
    with pytest.raises(CheckpointError, match="GCDF-CKPT"):
        load_checkpoint(tmp_path / "bad.ckpt")
    (tmp_path / "short.ckpt").write_bytes(buf[:-100])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "short.ckpt")


def test_resume_matches_uninterrupted_run():
    full = GCDformer(ModelConfig(**TINY))
    full_losses = train(full, small_train_cfg(4)).losses
    part = GCDformer(ModelConfig(**TINY))
    first = train(part, small_train_cfg(4), steps=2)
    rest = train(part, small_train_cfg(4), optimizer=first.optimizer)
    assert first.losses + rest.losses == full_losses
    for k, v in full.params.items():
        assert np.array_equal(v.data, part.params[k].data)


@pytest.mark.slow
def test_training_reduces_loss():
    cfg = ModelConfig(n_layers=2, n_heads=4, d_model=64, d_label=16, seed=0)
    gen = GenConfig(max_clusters=20, max_points=300)
    res = train(GCDformer(cfg), TrainConfig(lr=1e-4, batch_size=2, epochs=1, steps_per_epoch=300,
                                             gen=gen, seed=0))
    assert np.mean(res.losses[-50:]) < np.mean(res.losses[:50])
