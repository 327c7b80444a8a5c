"""Variable-coefficient Neumann problems on the square.

The operator ``-div(sigma grad u)`` is discretized with a node-centered
finite-volume 5-point stencil: face conductivities are harmonic means of the
two adjacent nodal values, boundary nodes own half (edges) or quarter
(corners) control volumes, and the Neumann flux enters the right-hand side
through the boundary quadrature weights. Dividing by ``h**2`` makes interior
rows the familiar ``(-1, -1, 4, -1, -1) / h**2`` stencil while keeping the
matrix symmetric.

The pure Neumann system is singular (constants are in the kernel). Solves
project the load onto the range (zero sum), pin one node, factorize the
remaining SPD block, and then shift the solution to zero boundary mean.
"""

from __future__ import annotations

import logging
import weakref
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import (
    PERIMETER,
    BoundarySignal,
    Field,
    Grid,
    boundary_integral,
)

logger = logging.getLogger(__name__)

DIRECT_MAX_NODES = 66 * 66
CG_TOL = 1e-10


class CompatibilityError(ValueError):
    """Neumann flux does not integrate to zero."""


class SolverError(RuntimeError):
    """Iterative solver failed to reach the requested residual."""


class ConductivityError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SigmaField:
    """Nodal conductivity, piecewise constant with two values."""

    grid: Grid
    values: np.ndarray
    sigma0: float = 1.0
    sigma1: float = 10.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size != self.grid.size:
            raise ConductivityError(f"sigma has {v.size} values for {self.grid.size} nodes")
        if self.sigma0 <= 0 or self.sigma1 <= 0 or np.any(v <= 0):
            raise ConductivityError("conductivity must be strictly positive")
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid: Grid, sigma0: float = 1.0, sigma1: float = 10.0) -> "SigmaField":
        return cls(grid, np.full(grid.size, float(sigma0)), sigma0, sigma1)

    @classmethod
    def from_mask(cls, grid: Grid, mask, sigma0: float = 1.0, sigma1: float = 10.0) -> "SigmaField":
        mask = np.asarray(mask, dtype=float).ravel()
        return cls(grid, sigma1 * mask + sigma0 * (1.0 - mask), sigma0, sigma1)

    def background(self) -> "SigmaField":
        return SigmaField.constant(self.grid, self.sigma0, self.sigma1)


@dataclass(eq=False)
class SparseSystem:
    """Assembled Neumann operator plus a lazily built solver.

    ``matrix`` is the unconstrained operator (row sums vanish). Node
    ``pinned`` is dropped to obtain a nonsingular SPD block.
    """

    grid: Grid
    matrix: sp.csr_matrix
    pinned: int = 0
    _lu: object = field(default=None, repr=False)

    @property
    def keep(self) -> np.ndarray:
        return np.delete(np.arange(self.grid.size), self.pinned)

    def _factor(self):
        if self._lu is None:
            keep = self.keep
            block = self.matrix[keep][:, keep].tocsc()
            self._lu = spla.splu(block, permc_spec="MMD_AT_PLUS_A")
        return self._lu

    def solve_block(self, rhs: np.ndarray) -> np.ndarray:
        """Apply the pinned Green operator: zero at ``pinned``, block inverse elsewhere."""
        rhs = np.asarray(rhs, dtype=float)
        keep = self.keep
        u = np.zeros_like(rhs)
        if self.grid.size <= DIRECT_MAX_NODES:
            u[keep] = self._factor().solve(rhs[keep])
        else:
            u[keep] = self._cg(rhs[keep])
        return u

    def solve_load(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``matrix @ u = rhs`` for one or many loads.

        Loads are projected to zero sum (the range of the operator) and the
        solutions shifted to zero boundary mean. ``rhs`` may be (M,) or (M, k).
        """
        rhs = np.asarray(rhs, dtype=float)
        rhs = rhs - rhs.mean(axis=0, keepdims=True)
        return _fix_gauge(self.grid, self.solve_block(rhs))

    def _cg(self, rhs):
        keep = self.keep
        A = self.matrix[keep][:, keep].tocsr()
        inv_diag = 1.0 / A.diagonal()
        M = spla.LinearOperator(A.shape, matvec=lambda r: inv_diag * r)
        cols = rhs.reshape(A.shape[0], -1)
        out = np.zeros_like(cols)
        maxiter = 10 * self.grid.size
        for k in range(cols.shape[1]):
            b = cols[:, k]
            if not np.any(b):
                continue
            x, info = spla.cg(A, b, rtol=CG_TOL, atol=0.0, maxiter=maxiter, M=M)
            res = np.linalg.norm(A @ x - b) / np.linalg.norm(b)
            if info != 0 or res > 10 * CG_TOL:
                raise SolverError(f"CG stopped with relative residual {res:.3e} (info={info})")
            out[:, k] = x
        return out.reshape(rhs.shape)

    def residual(self, u: np.ndarray, rhs: np.ndarray) -> float:
        rhs = rhs - rhs.mean()
        return float(np.linalg.norm(self.matrix @ u - rhs) / max(np.linalg.norm(rhs), 1e-300))


def _fix_gauge(grid: Grid, u: np.ndarray) -> np.ndarray:
    b = grid.boundary
    mean = b.weights @ u[b.order] / PERIMETER
    return u - mean


def assemble(sigma: SigmaField) -> SparseSystem:
    grid = sigma.grid
    m, h = grid.m, grid.h
    s = sigma.values.reshape(m, m)
    idx = np.arange(grid.size).reshape(m, m)

    rows, cols, vals = [], [], []

    def add_faces(a, b, sa, sb, on_edge):
        c = 2.0 * sa * sb / (sa + sb)
        c = np.where(on_edge, 0.5 * c, c)
        rows.extend([a, b])
        cols.extend([b, a])
        vals.extend([-c, -c])
        return a, b, c

    # x-direction faces: between (i, j) and (i, j+1); half length on top/bottom rows
    edge_x = np.zeros((m, m - 1), dtype=bool)
    edge_x[[0, -1], :] = True
    ax, bx, cx = add_faces(idx[:, :-1].ravel(), idx[:, 1:].ravel(),
                           s[:, :-1].ravel(), s[:, 1:].ravel(), edge_x.ravel())
    edge_y = np.zeros((m - 1, m), dtype=bool)
    edge_y[:, [0, -1]] = True
    ay, by, cy = add_faces(idx[:-1, :].ravel(), idx[1:, :].ravel(),
                           s[:-1, :].ravel(), s[1:, :].ravel(), edge_y.ravel())

    diag = np.zeros(grid.size)
    for a, b, c in ((ax, bx, cx), (ay, by, cy)):
        np.add.at(diag, a, c)
        np.add.at(diag, b, c)
    rows.append(np.arange(grid.size))
    cols.append(np.arange(grid.size))
    vals.append(diag)

    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.size, grid.size),
    ).tocsr() / h**2
    return SparseSystem(grid, A.tocsr())


def neumann_load(g: BoundarySignal) -> np.ndarray:
    """Right-hand side of the scaled system for boundary flux ``g``."""
    grid = g.grid
    b = grid.boundary
    rhs = np.zeros(grid.size)
    rhs[b.order] = b.weights * g.values / grid.h**2
    return rhs


def check_compatible(g: BoundarySignal, tol: float = 1e-8) -> None:
    total = boundary_integral(g)
    scale = max(g.norm(), 1e-300)
    if abs(total) > tol * scale:
        raise CompatibilityError(
            f"boundary flux integrates to {total:.3e} (norm {scale:.3e}); project to zero mean first"
        )


def solve_neumann(system: SparseSystem, g: BoundarySignal, *, project: bool = False) -> Field:
    """Solve the Neumann problem with flux ``g`` and zero boundary mean.

    Set ``project=True`` to silently remove the mean of ``g`` (noisy data);
    otherwise an incompatible flux raises :class:`CompatibilityError`.
    """
    if project:
        g = g.zero_mean()
    else:
        check_compatible(g)
    rhs = neumann_load(g)
    u = system.solve_load(rhs)
    res = system.residual(u, rhs)
    if res > 1e-9:
        raise SolverError(f"relative residual {res:.3e} exceeds tolerance")
    return Field(system.grid, u)


# ---------------------------------------------------------------------------
# cached systems

_SYSTEMS: "weakref.WeakKeyDictionary[SigmaField, SparseSystem]" = weakref.WeakKeyDictionary()


def system_for(sigma: SigmaField) -> SparseSystem:
    """Assembled system for ``sigma``; the factorization is reused across calls."""
    sys_ = _SYSTEMS.get(sigma)
    if sys_ is None:
        sys_ = _SYSTEMS[sigma] = assemble(sigma)
    return sys_


@lru_cache(maxsize=16)
def laplace_system(m: int) -> SparseSystem:
    """Unit-conductivity Neumann Laplacian on an m x m grid (cached)."""
    grid = Grid(m)
    return assemble(SigmaField.constant(grid, 1.0, 1.0))


# ---------------------------------------------------------------------------
# NtD maps


def ntd_apply(sigma: SigmaField, g: BoundarySignal, *, project: bool = False) -> BoundarySignal:
    """Neumann-to-Dirichlet map: boundary voltage for current ``g``."""
    u = solve_neumann(system_for(sigma), g, project=project)
    return u.trace().zero_mean()


def ntd_operator(sigma: SigmaField) -> np.ndarray:
    """Dense nodal matrix ``T`` with ``ntd_apply(g).values == T @ g.values``.

    Valid for zero-mean ``g``; the constant vector is mapped to zero.
    """
    grid = sigma.grid
    b = grid.boundary
    n = len(b)
    loads = np.zeros((grid.size, n))
    loads[b.order, np.arange(n)] = b.weights / grid.h**2
    # project each nodal flux to zero mean: subtract a uniform flux
    loads[b.order, :] -= (b.weights / grid.h**2)[:, None] * (b.weights / PERIMETER)[None, :]
    U = system_for(sigma).solve_load(loads)
    T = U[b.order, :]
    T -= (b.weights @ T / PERIMETER)[None, :]
    return T


@dataclass(frozen=True)
class NtDMatrix:
    matrix: np.ndarray
    basis: list


def ntd_matrix(sigma: SigmaField, basis: list) -> NtDMatrix:
    """Matrix of the NtD map in a (not necessarily orthonormal) boundary basis.

    Column l holds the coefficients of ``Lambda g_l`` obtained by solving the
    Gram system against the boundary inner products.
    """
    for g in basis:
        check_compatible(g)
    images = [ntd_apply(sigma, g) for g in basis]
    gram = np.array([[gi.inner(gj) for gj in basis] for gi in basis])
    loads = np.array([[gk.inner(f) for f in images] for gk in basis])
    return NtDMatrix(np.linalg.solve(gram, loads), list(basis))


def harmonic_extension(d: BoundarySignal) -> Field:
    """Harmonic function with Neumann flux ``d`` and zero boundary mean.

    A residual mean in ``d`` (e.g. from multiplicative noise) is projected
    out before solving.
    """
    total = boundary_integral(d)
    if abs(total) > 1e-8 * max(d.norm(), 1e-300):
        logger.debug("projecting flux with integral %.3e to zero mean", total)
    return solve_neumann(laplace_system(d.grid.m), d, project=True)


# ---------------------------------------------------------------------------
# dipoles


def dipole_load(grid: Grid, node: int, d) -> np.ndarray:
    """Discrete ``-d . grad(delta_x)``: loads -+d_n/(2h h^2) at x +- h e_n."""
    m, h = grid.m, grid.h
    i, j = divmod(int(node), m)
    if not (1 <= i <= m - 2 and 1 <= j <= m - 2):
        raise ValueError(f"dipole node {node} is not strictly interior")
    rhs = np.zeros(grid.size)
    s = 1.0 / (2.0 * h * h * h)
    rhs[i * m + j + 1] -= d[0] * s
    rhs[i * m + j - 1] += d[0] * s
    rhs[(i + 1) * m + j] -= d[1] * s
    rhs[(i - 1) * m + j] += d[1] * s
    return rhs


def solve_dipole(grid: Grid, node: int, d) -> Field:
    """Neumann Laplace solution driven by a dipole at ``node`` along ``d``."""
    u = laplace_system(grid.m).solve_load(dipole_load(grid, node, d))
    return Field(grid, u)


def dipole_traces(grid: Grid, nodes: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Boundary traces of unit e1 and e2 dipoles at many nodes.

    Returns two (n_nodes, n_boundary) arrays. Uses symmetry of the Green
    operator: one solve per boundary node instead of two per sampling node.
    The trace for direction d is ``d[0] * T1 + d[1] * T2``.
    """
    if nodes is None:
        nodes = grid.interior
    m, h = grid.m, grid.h
    b = grid.boundary
    n = len(b)
    sys_ = laplace_system(m)
    # G e_k for every boundary node k; G is symmetric, so (G e_k) . load = (G load)_k
    unit = np.zeros((grid.size, n))
    unit[b.order, np.arange(n)] = 1.0
    Z = sys_.solve_block(unit)
    s = 1.0 / (2.0 * h * h * h)
    T1 = -(Z[nodes + 1] - Z[nodes - 1]) * s
    T2 = -(Z[nodes + m] - Z[nodes - m]) * s
    mean1 = T1 @ b.weights / PERIMETER
    mean2 = T2 @ b.weights / PERIMETER
    return T1 - mean1[:, None], T2 - mean2[:, None]


__all__ = [
    "CompatibilityError",
    "ConductivityError",
    "NtDMatrix",
    "SigmaField",
    "SolverError",
    "SparseSystem",
    "assemble",
    "dipole_traces",
    "harmonic_extension",
    "ntd_apply",
    "ntd_matrix",
    "ntd_operator",
    "solve_dipole",
    "solve_neumann",
]
