"""Mesh-weighted integral attention.

For latents ``x`` (M positions by c channels) the block computes

    U = alpha * LN_Q(x WQ) LN_K(x WK)^T (x WV),

i.e. a quadrature of the learned kernel ``kappa(z_i, z_j)`` against V with
weight ``alpha = h**2`` of the grid the block lives on. The optional softmax
variant normalizes each kernel row over keys before the alpha weighting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor_ad as ad
from .tensor_ad import ShapeError, Tensor


class BootstrapDomainError(ValueError):
    pass


@dataclass(frozen=True)
class AttentionConfig:
    channels: int
    alpha: float
    heads: int = 1
    softmax: bool = False
    normalize: bool = True

    def __post_init__(self):
        if self.channels % self.heads:
            raise ValueError(f"channels={self.channels} not divisible by heads={self.heads}")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")


def grid_alpha(m: int) -> float:
    """Mesh weight h**2 for a node-centered grid with m nodes per side."""
    return (2.0 / (m - 1)) ** 2


def init_attention(c_q: int, c_v: int, channels: int, rng, prefix: str = "attn") -> dict:
    """Weights for one attention block.

    ``c_q`` feeds the query/key projections and ``c_v`` the value projection.
    """
    def u(fan_in, shape, name):
        s = fan_in ** -0.5
        return ad.parameter(rng.uniform(-s, s, shape), name=f"{prefix}.{name}")

    return {
        "WQ": u(c_q, (c_q, channels), "WQ"),
        "WK": u(c_q, (c_q, channels), "WK"),
        "WV": u(c_v, (c_v, channels), "WV"),
        "gq": ad.parameter(np.ones(channels), name=f"{prefix}.gq"),
        "bq": ad.parameter(np.zeros(channels), name=f"{prefix}.bq"),
        "gk": ad.parameter(np.ones(channels), name=f"{prefix}.gk"),
        "bk": ad.parameter(np.zeros(channels), name=f"{prefix}.bk"),
    }


def _split_heads(t: Tensor, heads: int) -> Tensor:
    # (..., M, c) -> (..., H, M, c/H)
    *lead, M, c = t.shape
    t = ad.reshape(t, tuple(lead) + (M, heads, c // heads))
    n = len(lead)
    axes = tuple(range(n)) + (n + 1, n, n + 2)
    return ad.transpose(t, axes)


def _merge_heads(t: Tensor) -> Tensor:
    *lead, H, M, d = t.shape
    n = len(lead)
    t = ad.transpose(t, tuple(range(n)) + (n + 1, n, n + 2))
    return ad.reshape(t, tuple(lead) + (M, H * d))


def _project(xq, xv, W: dict, cfg: AttentionConfig):
    xq, xv = ad.as_tensor(xq), ad.as_tensor(xv)
    for t in (xq, xv):
        if t.ndim < 2:
            raise ShapeError(f"attention input must be (..., M, c), got {t.shape}")
    if xq.shape[-2] != xv.shape[-2]:
        raise ShapeError(f"query positions {xq.shape} and value positions {xv.shape} differ")
    Q = ad.matmul(xq, W["WQ"])
    K = ad.matmul(xq, W["WK"])
    V = ad.matmul(xv, W["WV"])
    if cfg.normalize:
        Q = ad.layer_norm(Q, W["gq"], W["bq"], axis=-1)
        K = ad.layer_norm(K, W["gk"], W["bk"], axis=-1)
    return Q, K, V


def _kernel(Q: Tensor, K: Tensor, cfg: AttentionConfig) -> Tensor:
    Qh, Kh = _split_heads(Q, cfg.heads), _split_heads(K, cfg.heads)
    S = ad.matmul(Qh, ad.transpose(Kh, tuple(range(Kh.ndim - 2)) + (Kh.ndim - 1, Kh.ndim - 2)))
    if cfg.softmax:
        S = ad.softmax(S, axis=-1)
    return ad.scale(S, cfg.alpha)


def extract_kernel(x, W: dict, cfg: AttentionConfig) -> Tensor:
    """alpha * kappa(z_i, z_j) as a (..., H, M, M) tensor."""
    Q, K, _ = _project(x, x, W, cfg)
    return _kernel(Q, K, cfg)


def attention_values(x, W: dict, cfg: AttentionConfig) -> Tensor:
    """The projected values ``x WV`` split by head, (..., H, M, c/H)."""
    _, _, V = _project(x, x, W, cfg)
    return _split_heads(V, cfg.heads)


def _attend(xq, xv, W, cfg) -> Tensor:
    Q, K, V = _project(xq, xv, W, cfg)
    A = _kernel(Q, K, cfg)
    return _merge_heads(ad.matmul(A, _split_heads(V, cfg.heads)))


def integral_attention(x, W: dict, cfg: AttentionConfig) -> Tensor:
    """Self-attention over positions; ``x`` is (..., M, c_in), result (..., M, channels)."""
    return _attend(x, x, W, cfg)


def _positions(t: Tensor) -> Tensor:
    # (B, C, m, m) -> (B, m*m, C)
    B, C, m, _ = t.shape
    return ad.transpose(ad.reshape(t, (B, C, m * m)), (0, 2, 1))


def _image(t: Tensor, m: int) -> Tensor:
    B, M, C = t.shape
    return ad.reshape(ad.transpose(t, (0, 2, 1)), (B, C, m, m))


def cross_attention(coarse, fine, W: dict, cfg: AttentionConfig) -> Tensor:
    """Coarse-to-fine attention used on decoder skip connections.

    Queries and keys come from the coarse latent; values from the fine skip
    latent resampled onto the coarse grid. The attended field is upsampled to
    the fine grid and appended after the skip channels.

    Parameters
    ----------
    coarse : Tensor, (B, Cc, mc, mc)
    fine : Tensor, (B, Cf, mf, mf), with mf = 2 mc - 1
    W : dict
        ``WQ``, ``WK`` of shape (Cc, c) and ``WV`` of shape (Cf, c).
    cfg : AttentionConfig
        ``alpha`` should be the coarse grid's h**2.

    Returns
    -------
    Tensor, (B, Cf + c, mf, mf)
    """
    coarse, fine = ad.as_tensor(coarse), ad.as_tensor(fine)
    if coarse.ndim != 4 or fine.ndim != 4 or coarse.shape[0] != fine.shape[0]:
        raise ShapeError(f"cross_attention: coarse {coarse.shape} vs fine {fine.shape}")
    mc, mf = coarse.shape[-1], fine.shape[-1]
    if mf != 2 * mc - 1:
        raise ShapeError(f"cross_attention: fine grid {mf} is not the refinement of {mc}")
    v_src = ad.bilinear_resize(fine, mc)
    U = _attend(_positions(coarse), _positions(v_src), W, cfg)
    up = ad.upsample2(_image(U, mc))
    return ad.concat([fine, up], axis=1)


# ---------------------------------------------------------------------------
# frequency bootstrap experiment


def bootstrap_target(a: int, z: np.ndarray) -> np.ndarray:
    """Exact integral of sin((a+1)(x - z)) sin(a x) over (0, pi)."""
    return 2.0 * a / (2.0 * a + 1.0) * np.sin((a + 1) * z)


def _legendre_fit(x: np.ndarray, w: np.ndarray, N: int) -> np.ndarray:
    """Weighted least-squares projector onto the first N Legendre polynomials."""
    t = 2.0 * x / np.pi - 1.0
    B = np.polynomial.legendre.legvander(t, N - 1)
    sw = np.sqrt(w)[:, None]
    coef = np.linalg.pinv(B * sw) * sw.T
    return B @ coef


def bootstrap_error(a: int, N: int, quadrature_m: int = 2001) -> float:
    """Relative L2 error of the rank-N degenerate-kernel integral.

    The kernel sin((a+1)(x - z)) is Taylor-expanded in z about pi/2 to N
    terms; the x-factors, z-factors and the input sin(a x) are each projected
    onto N Legendre polynomials on (0, pi), and the resulting integral is
    compared with the exact (2a/(2a+1)) sin((a+1) z).
    """
    if a < 1 or N < 1:
        raise BootstrapDomainError("a and N must be >= 1")
    if N > 30:
        raise BootstrapDomainError(f"N={N} is too large for a stable Legendre projection")
    x = np.linspace(0.0, np.pi, quadrature_m)
    w = np.full(quadrature_m, x[1] - x[0])
    w[[0, -1]] *= 0.5
    P = _legendre_fit(x, w, N)
    c = a + 1
    z0 = 0.5 * np.pi
    j = np.arange(N)
    fact = np.array([math.factorial(int(k)) for k in j], dtype=float)
    q = (c ** j)[None, :] * np.sin(c * (x[:, None] - z0) - j[None, :] * np.pi / 2)
    k = (x[:, None] - z0) ** j[None, :] / fact[None, :]
    q, k = P @ q, P @ k
    v = P @ np.sin(a * x)
    u = k @ (q.T @ (w * v))
    ref = bootstrap_target(a, x)
    return float(np.sqrt(np.sum(w * (u - ref) ** 2) / np.sum(w * ref ** 2)))


def brute_force_c1(a: int, z: float, n: int = 200001) -> float:
    """Dense trapezoid value of the bootstrap integral divided by sin((a+1) z)."""
    x = np.linspace(0.0, np.pi, n)
    f = np.sin((a + 1) * (x - z)) * np.sin(a * x)
    return float(np.trapezoid(f, x) / np.sin((a + 1) * z))
