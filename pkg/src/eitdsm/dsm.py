"""Direct sampling index functions.

The classical index at a sampling node z is

    I(z) = (d(z) . grad phi(z)) / (||f - Lambda_0 g|| * |eta_z|_Y),

where phi is the harmonic extension of the difference data, d the probing
direction and eta_z the Neumann response to a dipole at z along d(z).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import tensor_ad as ad
from .elliptic import (
    SigmaField,
    dipole_traces,
    harmonic_extension,
    ntd_operator,
)
from .mesh import PERIMETER, BoundarySignal, Field, Grid, VectorField, gradient

logger = logging.getLogger(__name__)

DATA_NORM_FLOOR = 1e-14
DIRECTION_EPS = 1e-12
VALUE_EPS = 1e-8


@dataclass(frozen=True)
class IndexField:
    field: Field
    n_pairs: int = 1
    order: float = 1.5
    tau: float = 0.0

    @property
    def values(self) -> np.ndarray:
        return self.field.values

    @property
    def grid(self) -> Grid:
        return self.field.grid


@dataclass(frozen=True)
class EigenPairs:
    """Eigenpairs of Lambda_sigma - Lambda_sigma0, ordered by |lambda| descending.

    ``sign`` is the common sign of the eigenvalues (+1 or -1).
    """

    values: np.ndarray
    functions: list
    sign: int = 1

    def __len__(self) -> int:
        return len(self.values)


def hs_seminorm(t: BoundarySignal, s: float = 1.5) -> float:
    """Spectral H^s seminorm over the arc-length Fourier modes of ``t``.

    Normalized so a single full-period cosine has ``s=0`` value
    ``sqrt(perimeter / 2)``.
    """
    v = t.values
    mean = t.mean()
    if abs(mean) > 1e-10 * max(np.abs(v).max(), 1e-300):
        warnings.warn("hs_seminorm: input has nonzero boundary mean; projecting", stacklevel=2)
        v = v - mean
    n = v.size
    coef = np.fft.fft(v) / n * np.sqrt(PERIMETER)
    k = np.fft.fftfreq(n, d=1.0 / n)
    w = np.abs(2.0 * np.pi * k / PERIMETER) ** (2.0 * s)
    w[0] = 0.0
    return float(np.sqrt(np.sum(w * np.abs(coef) ** 2)))


def _hs_weights(n: int, s: float) -> np.ndarray:
    k = np.fft.fftfreq(n, d=1.0 / n)
    w = np.abs(2.0 * np.pi * k / PERIMETER) ** (2.0 * s)
    w[0] = 0.0
    return w


def hs_seminorm_rows(traces: np.ndarray, s: float = 1.5) -> np.ndarray:
    """Row-wise :func:`hs_seminorm` for a stack of zero-mean traces."""
    n = traces.shape[1]
    coef = np.fft.fft(traces, axis=1) / n * np.sqrt(PERIMETER)
    return np.sqrt(np.abs(coef) ** 2 @ _hs_weights(n, s))


def probing_direction(phi: Field) -> VectorField:
    """Unit vectors along grad phi; zero where the gradient vanishes."""
    grad = gradient(phi)
    nrm = grad.norm()
    ok = nrm > DIRECTION_EPS
    inv = np.where(ok, 1.0 / np.where(ok, nrm, 1.0), 0.0)
    return VectorField(Field(phi.grid, grad.x.values * inv), Field(phi.grid, grad.y.values * inv))


def index_classic(phi: Field, data_norm: float, s: float = 1.5) -> IndexField:
    grid = phi.grid
    grad = gradient(phi)
    d = probing_direction(phi)
    nodes = grid.interior
    T1, T2 = dipole_traces(grid, nodes)
    dx = d.x.values[nodes]
    dy = d.y.values[nodes]
    eta = dx[:, None] * T1 + dy[:, None] * T2
    ynorm = hs_seminorm_rows(eta, s)
    num = dx * grad.x.values[nodes] + dy * grad.y.values[nodes]
    norm = max(float(data_norm), DATA_NORM_FLOOR)
    vals = np.zeros(grid.size)
    ok = ynorm > 0
    vals[nodes[ok]] = num[ok] / (norm * ynorm[ok])
    return IndexField(Field(grid, vals), n_pairs=1, order=s)


def dsm_from_data(diff: BoundarySignal, s: float = 1.5) -> tuple[IndexField, Field]:
    """Classical index directly from difference data ``f - Lambda_0 g``."""
    phi = harmonic_extension(diff)
    return index_classic(phi, diff.norm(), s), phi


# ---------------------------------------------------------------------------
# learnable kernels


def learnable_input(phi: Field) -> np.ndarray:
    """Row vector ``[phi_x | phi_y]`` of length 2M."""
    g = gradient(phi)
    return np.concatenate([g.x.values, g.y.values])[None, :]


def index_learnable(x: ad.Tensor, WQ: ad.Tensor, WK: ad.Tensor, WV: ad.Tensor,
                    data_norm: float, eps: float = VALUE_EPS) -> ad.Tensor:
    """Kernelized index ``C (xWQ * xWK) / sqrt(xWV * xWV + eps)``.

    ``x`` is (1, 2M) and each weight (2M, M); the result is (1, M) and
    differentiable in all four tensors.
    """
    x, WQ, WK, WV = (ad.as_tensor(t) for t in (x, WQ, WK, WV))
    if x.ndim != 2 or x.shape[0] != 1:
        raise ad.ShapeError(f"index input must be (1, 2M), got {x.shape}")
    for name, W in (("WQ", WQ), ("WK", WK), ("WV", WV)):
        if W.ndim != 2 or W.shape[0] != x.shape[1] or 2 * W.shape[1] != W.shape[0]:
            raise ad.ShapeError(f"{name} must be (2M, M) = ({x.shape[1]}, {x.shape[1] // 2}), got {W.shape}")
    C = 1.0 / max(float(data_norm), DATA_NORM_FLOOR)
    q = ad.matmul(x, WQ)
    k = ad.matmul(x, WK)
    v = ad.matmul(x, WV)
    den = ad.sqrt(ad.add_scalar(ad.mul(v, v), eps))
    return ad.scale(ad.div(ad.mul(q, k), den), C)


# ---------------------------------------------------------------------------
# spectral construction


def ntd_diff_eigenpairs(sigma: SigmaField, L: int) -> EigenPairs:
    """Leading eigenpairs of Lambda_sigma - Lambda_sigma0 in the nodal boundary basis."""
    grid = sigma.grid
    n = grid.n_boundary
    if L > n - 1:
        raise ValueError(f"L={L} exceeds the boundary basis size {n - 1}")
    D = ntd_operator(sigma) - ntd_operator(sigma.background())
    # weights are uniform (h), so the operator is symmetric in the plain dot product
    D = 0.5 * (D + D.T)
    lam, vec = np.linalg.eigh(D)
    order = np.argsort(-np.abs(lam))[:L]
    lam, vec = lam[order], vec[:, order]
    h = grid.h
    funcs = [BoundarySignal(grid, vec[:, i] / np.sqrt(h)) for i in range(len(lam))]
    nz = lam[np.abs(lam) > 1e-12]
    sign = 1
    if nz.size:
        sign = int(np.sign(nz[0]))
        if np.any(np.sign(nz) != sign):
            logger.warning("Lambda_sigma - Lambda_0 is not sign-definite on the leading modes")
    return EigenPairs(lam, funcs, sign)


def theta_from_pairs(pairs: EigenPairs, L: int, d=(1.0, 0.0), *, averaged: bool = False) -> Field:
    """Sum of (d . grad phi_l)^2 / |lambda_l|^3 over the first L pairs."""
    if not pairs.functions:
        raise ValueError("no eigenpairs")
    grid = pairs.functions[0].grid
    total = np.zeros(grid.size)
    dirs = [(1.0, 0.0), (0.0, 1.0)] if averaged else [tuple(d)]
    for l in range(min(L, len(pairs))):
        lam = pairs.values[l]
        if abs(lam) <= 1e-12:
            warnings.warn(f"theta_L: truncating at l={l}, eigenvalue {lam:.2e} too small", stacklevel=2)
            break
        phi = harmonic_extension(pairs.functions[l] * lam)
        g = gradient(phi)
        acc = sum(g.dot(dd) ** 2 for dd in dirs) / len(dirs)
        total += acc / abs(lam) ** 3
    return Field(grid, total)


def theta_L(sigma: SigmaField, L: int, d=(1.0, 0.0), *, averaged: bool = False) -> Field:
    if L <= 0:
        return Field(sigma.grid, np.zeros(sigma.grid.size))
    return theta_from_pairs(ntd_diff_eigenpairs(sigma, L), L, d, averaged=averaged)


def arctan_index(theta: Field, eps: float, rho_bound: float) -> IndexField:
    if eps <= 0 or rho_bound <= 0:
        raise ValueError("eps and rho_bound must be positive")
    vals = 1.0 - (2.0 / np.pi) * np.arctan(np.pi * eps * theta.values / (2.0 * rho_bound))
    return IndexField(Field(theta.grid, vals))


def calibrate_rho_bound(theta: Field, pilot_nodes: np.ndarray, q: float = 90.0) -> float:
    """Percentile of Theta over a pilot set of nodes, used as the inside bound."""
    return float(np.percentile(theta.values[pilot_nodes], q))
