import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eitdsm import tensor_ad as ad
from eitdsm.attention import (
    AttentionConfig, BootstrapDomainError, bootstrap_error, brute_force_c1, cross_attention,
    extract_kernel, attention_values, grid_alpha, init_attention, integral_attention,
)
from eitdsm.tensor_ad.gradcheck import check_gradients


def _identity_weights(c):
    I = np.eye(c)
    return {"WQ": I, "WK": I, "WV": I, "gq": np.ones(c), "bq": np.zeros(c), "gk": np.ones(c), "bk": np.zeros(c)}


def test_identity_example():
    x = np.eye(2)
    cfg = AttentionConfig(2, 1.0, normalize=False)
    U = integral_attention(x, _identity_weights(2), cfg).data
    assert np.array_equal(U, x)


def test_alpha_linearity(rng):
    x = rng.standard_normal((8, 4))
    W = {k: v.data for k, v in init_attention(4, 4, 4, rng).items()}
    a = integral_attention(x, W, AttentionConfig(4, 0.25)).data
    b = integral_attention(x, W, AttentionConfig(4, 0.5)).data
    assert np.array_equal(b, 2 * a)


@pytest.mark.parametrize("softmax", [False, True])
def test_attention_gradcheck(rng, softmax):
    x = ad.parameter(rng.standard_normal((8, 4)))
    W = init_attention(4, 4, 4, rng)
    cfg = AttentionConfig(4, 0.3, softmax=softmax)
    R = rng.standard_normal((8, 4))
    err = check_gradients(lambda: ad.reduce_sum(ad.mul(integral_attention(x, W, cfg), R)), [x] + list(W.values()))
    assert err < 1e-5


@pytest.mark.parametrize("heads", [1, 2])
def test_kernel_recomposition_and_basis_expansion(rng, heads):
    x = rng.standard_normal((2, 6, 4))
    W = {k: v.data for k, v in init_attention(4, 4, 4, rng).items()}
    cfg = AttentionConfig(4, 0.7, heads=heads)
    U = integral_attention(x, W, cfg).data
    K = extract_kernel(x, W, cfg).data            # (B, H, M, M), alpha included
    V = attention_values(x, W, cfg).data          # (B, H, M, d)
    rec = np.concatenate([K[:, h] @ V[:, h] for h in range(heads)], axis=-1)
    assert np.max(np.abs(U - rec)) <= 4 * np.finfo(float).eps * np.abs(U).max()
    direct = np.zeros_like(U)
    d = 4 // heads
    for b in range(2):
        for h in range(heads):
            for i in range(6):
                for m in range(6):
                    direct[b, i, h * d:(h + 1) * d] += K[b, h, i, m] * V[b, h, m]
    assert np.max(np.abs(U - direct)) < 1e-12


def test_tied_projections_give_symmetric_kernel(rng):
    x = rng.standard_normal((7, 3))
    W = {k: v.data for k, v in init_attention(3, 3, 3, rng).items()}
    W["WK"] = W["WQ"]
    K = extract_kernel(x, W, AttentionConfig(3, 1.0, normalize=False)).data[0]
    assert np.max(np.abs(K - K.T)) < 1e-12


def test_linear_in_values(rng):
    x = rng.standard_normal((9, 4))
    W = {k: v.data for k, v in init_attention(4, 4, 4, rng).items()}
    V1, V2 = rng.standard_normal((2, 4, 4))
    cfg = AttentionConfig(4, 0.1)
    out = lambda V: integral_attention(x, {**W, "WV": V}, cfg).data
    assert np.max(np.abs(out(V1 + V2) - out(V1) - out(V2))) < 1e-12


def test_softmax_rows_sum_to_one(rng):
    x = rng.standard_normal((10, 4))
    W = {k: v.data for k, v in init_attention(4, 4, 4, rng).items()}
    alpha = 0.125
    K = extract_kernel(x, W, AttentionConfig(4, alpha, softmax=True)).data
    assert np.max(np.abs(K.sum(axis=-1) / alpha - 1)) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_layer_norm_shift_invariance(seed):
    r = np.random.default_rng(seed)
    Q = r.standard_normal((6, 5))
    shift = r.standard_normal((6, 1)) * 10
    a = ad.layer_norm(Q, np.ones(5), np.zeros(5), axis=-1).data
    b = ad.layer_norm(Q + shift, np.ones(5), np.zeros(5), axis=-1).data
    assert np.max(np.abs(a - b)) < 1e-10


def test_config_validation():
    with pytest.raises(ValueError):
        AttentionConfig(5, 1.0, heads=2)
    with pytest.raises(ValueError):
        AttentionConfig(4, 0.0)
    assert grid_alpha(9) == 0.0625


# -- cross attention ----------------------------------------------------------------

def test_cross_attention_reduces_to_self_attention(rng):
    fine = rng.standard_normal((1, 3, 9, 9))
    coarse = ad.bilinear_resize(fine, 5).data
    cfg = AttentionConfig(3, grid_alpha(5), normalize=False)
    W = _identity_weights(3)
    out = cross_attention(coarse, fine, W, cfg).data
    assert out.shape == (1, 6, 9, 9)
    assert np.array_equal(out[:, :3], fine)
    pos = coarse.reshape(1, 3, 25).transpose(0, 2, 1)
    U = cfg.alpha * (pos @ pos.transpose(0, 2, 1)) @ pos
    expect = ad.upsample2(U.transpose(0, 2, 1).reshape(1, 3, 5, 5)).data
    assert np.allclose(out[:, 3:], expect, rtol=1e-12, atol=1e-13)


def test_cross_attention_gradcheck(rng):
    coarse, fine = ad.parameter(rng.standard_normal((2, 3, 3, 3))), ad.parameter(rng.standard_normal((2, 2, 5, 5)))
    W = init_attention(3, 2, 2, rng)
    cfg = AttentionConfig(2, grid_alpha(3))
    R = rng.standard_normal((2, 4, 5, 5))
    err = check_gradients(lambda: ad.reduce_sum(ad.mul(cross_attention(coarse, fine, W, cfg), R)),
                          [coarse, fine] + list(W.values()))
    assert err < 1e-5


def test_cross_attention_level_mismatch(rng):
    W = {k: v.data for k, v in init_attention(2, 2, 2, rng).items()}
    with pytest.raises(ad.ShapeError):
        cross_attention(np.zeros((1, 2, 5, 5)), np.zeros((1, 2, 7, 7)), W, AttentionConfig(2, 1.0))


# -- frequency bootstrap ------------------------------------------------------------

@pytest.mark.parametrize("a", [1, 2, 3])
def test_brute_force_constant(a):
    for z in (0.3, 1.0, 2.0):
        assert abs(brute_force_c1(a, z) - 2 * a / (2 * a + 1)) < 1e-6


def test_brute_force_a2_example():
    x = np.linspace(0, np.pi, 200001)
    val = np.trapezoid(np.sin(3 * (x - 1.0)) * np.sin(2 * x), x)
    assert abs(val - 0.8 * np.sin(3.0)) < 1e-6


def _oracle_bootstrap(a, N, nq=400):
    # continuous L2 projections computed with Gauss-Legendre quadrature
    t, w = np.polynomial.legendre.leggauss(nq)
    x = np.pi * (t + 1) / 2
    w = w * np.pi / 2
    B = np.polynomial.legendre.legvander(t, N - 1) * np.sqrt((2 * np.arange(N) + 1) / np.pi)
    proj = lambda f: B @ (B.T @ (w * f))
    c, z0 = a + 1, np.pi / 2
    u = np.zeros_like(x)
    v = proj(np.sin(a * x))
    for j in range(N):
        q = proj(c**j * np.sin(c * (x - z0) - j * np.pi / 2))
        k = proj((x - z0) ** j / math.factorial(j))
        u += k * np.sum(w * q * v)
    ref = 2 * a / (2 * a + 1) * np.sin(c * x)
    return np.sqrt(np.sum(w * (u - ref) ** 2) / np.sum(w * ref**2))


@pytest.mark.parametrize("N", [4, 8, 12, 14])
def test_bootstrap_matches_independent_oracle(N):
    assert bootstrap_error(2, N) == pytest.approx(_oracle_bootstrap(2, N), rel=1e-3)


def test_bootstrap_decreasing():
    errs = [bootstrap_error(2, N, 2001) for N in (4, 6, 8, 10, 12)]
    assert all(a > b for a, b in zip(errs, errs[1:]))


def test_bootstrap_domain():
    with pytest.raises(BootstrapDomainError):
        bootstrap_error(2, 31)
    with pytest.raises(BootstrapDomainError):
        bootstrap_error(0, 4)
