import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from omnigcd.model import GCDformer, ModelConfig
from omnigcd.synthgen import ConfigError, GcdTask
from omnigcd.tokenizer import _sinusoid, build_tokens, label_embedding, label_embeddings, normalize_latent


def test_label_embedding_small_case():
    np.testing.assert_allclose(label_embedding(3, 2), [math.sin(3), math.cos(3)], rtol=1e-15)
    np.testing.assert_allclose(label_embedding(3, 2), [0.14112, -0.98999], atol=1e-5)


def test_zero_input_limit_alternates():
    np.testing.assert_array_equal(_sinusoid(np.asarray(0), 8, 10000.0), [0, 1] * 4)


def test_formula_components():
    y, d = 17, 32
    emb = label_embedding(y, d)
    for i in range(d // 2):
        w = y / 10000 ** (2 * i / d)
        assert emb[2 * i] == pytest.approx(math.sin(w), abs=1e-15)
        assert emb[2 * i + 1] == pytest.approx(math.cos(w), abs=1e-15)


def test_invalid_labels():
    with pytest.raises(ValueError):
        label_embedding(0)
    with pytest.raises(ValueError):
        label_embedding(-4)
    with pytest.raises(ValueError):
        label_embeddings([1, 0, 2])


def test_embedding_injective_over_label_range():
    emb = label_embeddings(np.arange(1, 1001), 32)
    assert np.all(np.abs(emb) <= 1.0)
    diff = np.abs(emb[:, None, :] - emb[None, :, :]).max(axis=2)
    np.fill_diagonal(diff, np.inf)
    assert diff.min() > 1e-6


def tiny_model(**kw):
    cfg = dict(n_layers=1, n_heads=2, d_model=16, d_label=4, seed=3)
    cfg.update(kw)
    return GCDformer(ModelConfig(**cfg))


def test_identical_points_identical_rows():
    m = tiny_model()
    t = GcdTask([[0.1, 0.2], [0.1, 0.2], [0.5, 0.5]], [4, 4, 9], [True, True, False])
    tok = build_tokens(t, m).tokens.data
    assert np.array_equal(tok[0], tok[1])


def test_observed_flag_only_changes_label_slice():
    m = tiny_model()
    a = build_tokens(GcdTask([[0.3, -0.7]], [5], [True]), m).tokens.data
    b = build_tokens(GcdTask([[0.3, -0.7]], [5], [False]), m).tokens.data
    d_label = m.config.d_label
    assert np.array_equal(a[:, :-d_label], b[:, :-d_label])
    assert not np.array_equal(a[:, -d_label:], b[:, -d_label:])
    np.testing.assert_array_equal(b[0, -d_label:], m.params["mask_token"].data)
    np.testing.assert_array_equal(a[0, -d_label:], label_embedding(5, d_label))


def test_data_slice_is_affine_lift():
    m = tiny_model()
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1, 1, size=(9, 2))
    t = GcdTask(pts, rng.integers(1, 5, size=9), rng.random(9) < 0.5)
    tok = build_tokens(t, m).tokens.data
    W, b = m.params["lift.W"].data, m.params["lift.b"].data
    lifted = np.array([[sum(p[i] * W[i, j] for i in range(2)) + b[j] for j in range(W.shape[1])]
                       for p in pts])
    np.testing.assert_allclose(tok[:, :m.config.d_data], lifted, rtol=0, atol=1e-14)


def test_token_permutation_equivariance():
    m = tiny_model()
    rng = np.random.default_rng(1)
    t = GcdTask(rng.uniform(-1, 1, (8, 2)), rng.integers(1, 4, 8), rng.random(8) < 0.5)
    perm = rng.permutation(8)
    a = build_tokens(t, m).tokens.data[perm]
    b = build_tokens(t.permuted(perm), m).tokens.data
    assert np.array_equal(a, b)


def test_dimension_mismatch():
    with pytest.raises(ConfigError):
        build_tokens(GcdTask(np.zeros((2, 3)), [1, 2], [True, False]), tiny_model())


def test_normalize_examples():
    x = np.array([[-1.0, 0.5], [1.0, -0.5]])
    np.testing.assert_array_equal(normalize_latent(x), x)
    np.testing.assert_array_equal(normalize_latent([[3.0, -7.0]]), [[0.0, 0.0]])
    np.testing.assert_array_equal(normalize_latent(np.full((4, 2), 2.5)), np.zeros((4, 2)))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (12, 3), elements=st.floats(-1e3, 1e3)))
def test_normalize_is_a_similarity(x):
    out = normalize_latent(x)
    assert np.abs(out).max() <= 1.0
    if np.ptp(x, axis=0).max() < 1e-6:
        return
    assert np.abs(out).max() == 1.0
    d_in = np.linalg.norm(x[:, None] - x[None], axis=2)
    d_out = np.linalg.norm(out[:, None] - out[None], axis=2)
    i, j = np.unravel_index(d_in.argmax(), d_in.shape)
    ratio = d_out[i, j] / d_in[i, j]
    np.testing.assert_allclose(d_out, d_in * ratio, rtol=0, atol=1e-12)
