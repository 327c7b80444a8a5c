"""Node-centered Cartesian grids on the square (-1, 1)^2.

Nodes are stored row-major: ``values.reshape(m, m)[i, j]`` is the node at
``(x_j, y_i)``, so the first axis runs along y and the second along x.
Boundary nodes are traversed counter-clockwise starting at the corner
``(-1, -1)``; since the spacing is uniform the arc-length coordinate of the
k-th boundary node is simply ``k * h``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

PERIMETER = 8.0


class GridError(ValueError):
    """Invalid grid size or mismatched grids."""


@dataclass(frozen=True)
class BoundaryIndex:
    """Counter-clockwise boundary traversal of a grid.

    Attributes
    ----------
    order : ndarray of int
        Flat node indices, starting at (-1, -1).
    arclen : ndarray
        Arc-length coordinate in [0, 8) of each boundary node.
    weights : ndarray
        Trapezoidal weights; every node (corners included) gets ``h``.
    normals : ndarray, shape (n, 2)
        Outward unit normal. At corners this is the average of the two edge
        normals (not unit length), which is what a corner control volume sees.
    """

    order: np.ndarray
    arclen: np.ndarray
    weights: np.ndarray
    normals: np.ndarray

    def __len__(self) -> int:
        return len(self.order)


@dataclass(frozen=True)
class Grid:
    m: int
    h: float = field(init=False)

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 3:
            raise GridError(f"grid needs at least 3 nodes per side, got m={self.m}")
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "h", 2.0 / (self.m - 1))

    @property
    def size(self) -> int:
        return self.m * self.m

    @cached_property
    def coords(self) -> np.ndarray:
        """1D node coordinates along either axis."""
        return np.linspace(-1.0, 1.0, self.m)

    @cached_property
    def nodes(self) -> np.ndarray:
        """(M, 2) array of node coordinates, row-major."""
        X, Y = np.meshgrid(self.coords, self.coords)
        return np.column_stack([X.ravel(), Y.ravel()])

    @property
    def x(self) -> np.ndarray:
        return self.nodes[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.nodes[:, 1]

    @cached_property
    def interior(self) -> np.ndarray:
        """Flat indices of interior nodes."""
        ij = np.arange(1, self.m - 1)
        I, J = np.meshgrid(ij, ij, indexing="ij")
        return (I * self.m + J).ravel()

    @cached_property
    def boundary(self) -> BoundaryIndex:
        m, h = self.m, self.h
        last = m - 1
        # (row, col) pairs walking bottom -> right -> top -> left
        bottom = [(0, j) for j in range(0, last)]
        right = [(i, last) for i in range(0, last)]
        top = [(last, j) for j in range(last, 0, -1)]
        left = [(i, 0) for i in range(last, 0, -1)]
        rc = np.array(bottom + right + top + left)
        order = rc[:, 0] * m + rc[:, 1]
        n = len(order)
        normals = np.zeros((n, 2))
        for k, (i, j) in enumerate(rc):
            if i == 0:
                normals[k, 1] -= 1.0
            if i == last:
                normals[k, 1] += 1.0
            if j == 0:
                normals[k, 0] -= 1.0
            if j == last:
                normals[k, 0] += 1.0
        corner = (np.abs(normals).sum(axis=1) > 1)
        normals[corner] *= 0.5
        return BoundaryIndex(
            order=order,
            arclen=np.arange(n) * h,
            weights=np.full(n, h),
            normals=normals,
        )

    @property
    def n_boundary(self) -> int:
        return 4 * (self.m - 1)

    def field(self, fn) -> "Field":
        """Sample ``fn(x, y)`` at every node."""
        return Field(self, np.asarray(fn(self.x, self.y), dtype=float) * np.ones(self.size))


def make_grid(m: int) -> Grid:
    return Grid(m)


@dataclass(frozen=True)
class Field:
    """Real values on every node of a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size != self.grid.size:
            raise GridError(f"field has {v.size} values, grid has {self.grid.size} nodes")
        object.__setattr__(self, "values", v)

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.grid.m, self.grid.m)

    def trace(self) -> "BoundarySignal":
        return BoundarySignal(self.grid, self.values[self.grid.boundary.order])

    def __add__(self, other):
        return Field(self.grid, self.values + _vals(other))

    def __sub__(self, other):
        return Field(self.grid, self.values - _vals(other))

    def __mul__(self, c):
        return Field(self.grid, self.values * _vals(c))

    __rmul__ = __mul__

    def __neg__(self):
        return Field(self.grid, -self.values)


@dataclass(frozen=True)
class VectorField:
    x: Field
    y: Field

    def __post_init__(self):
        if self.x.grid != self.y.grid:
            raise GridError("vector field components live on different grids")

    @property
    def grid(self) -> Grid:
        return self.x.grid

    def norm(self) -> np.ndarray:
        return np.hypot(self.x.values, self.y.values)

    def dot(self, d) -> np.ndarray:
        """Pointwise dot product with a constant 2-vector or another VectorField."""
        if isinstance(d, VectorField):
            return self.x.values * d.x.values + self.y.values * d.y.values
        return self.x.values * d[0] + self.y.values * d[1]


@dataclass(frozen=True)
class BoundarySignal:
    """Values at the boundary nodes, in :attr:`Grid.boundary` order."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size != self.grid.n_boundary:
            raise GridError(
                f"boundary signal has {v.size} values, expected {self.grid.n_boundary}"
            )
        object.__setattr__(self, "values", v)

    @property
    def arclen(self) -> np.ndarray:
        return self.grid.boundary.arclen

    def inner(self, other: "BoundarySignal") -> float:
        """Boundary L2 inner product with trapezoidal weights."""
        return float(np.sum(self.grid.boundary.weights * self.values * other.values))

    def norm(self) -> float:
        return float(np.sqrt(self.inner(self)))

    def mean(self) -> float:
        return boundary_integral(self) / PERIMETER

    def zero_mean(self) -> "BoundarySignal":
        return BoundarySignal(self.grid, self.values - self.mean())

    def __add__(self, other):
        return BoundarySignal(self.grid, self.values + _vals(other))

    def __sub__(self, other):
        return BoundarySignal(self.grid, self.values - _vals(other))

    def __mul__(self, c):
        return BoundarySignal(self.grid, self.values * _vals(c))

    __rmul__ = __mul__

    def __neg__(self):
        return BoundarySignal(self.grid, -self.values)


def _vals(v):
    return v.values if hasattr(v, "values") else v


def boundary_signal(grid: Grid, fn) -> BoundarySignal:
    """Sample ``fn(s)`` over the arc-length coordinate."""
    return BoundarySignal(grid, fn(grid.boundary.arclen))


def normal_flux(grid: Grid, grad) -> BoundarySignal:
    """Sample ``n . grad(x, y)`` on the boundary.

    ``grad`` returns the two gradient components. Corners use the averaged
    normal, matching the two half-edges their control volume touches.
    """
    b = grid.boundary
    pts = grid.nodes[b.order]
    gx, gy = grad(pts[:, 0], pts[:, 1])
    return BoundarySignal(grid, b.normals[:, 0] * gx + b.normals[:, 1] * gy)


def boundary_integral(b: BoundarySignal) -> float:
    """Trapezoidal approximation of the boundary integral of ``b``."""
    return float(np.dot(b.grid.boundary.weights, b.values))


def gradient(f: Field) -> VectorField:
    """Second-order finite-difference gradient.

    Central differences inside, one-sided three-point stencils on the edges.
    """
    u = f.as_array()
    h = f.grid.h
    # np.gradient with edge_order=2 is exactly this stencil
    dy, dx = np.gradient(u, h, edge_order=2)
    return VectorField(Field(f.grid, dx), Field(f.grid, dy))


def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Linear interpolation between node-centered 1D grids on [-1, 1].

    Row k holds the weights producing output node k from the input nodes.
    """
    x_in = np.linspace(-1.0, 1.0, n_in)
    x_out = np.linspace(-1.0, 1.0, n_out)
    h = x_in[1] - x_in[0]
    pos = (x_out + 1.0) / h
    left = np.clip(np.floor(pos).astype(int), 0, n_in - 2)
    t = pos - left
    # snap nodes that coincide with input nodes to kill rounding noise
    t[np.isclose(t, 0.0, atol=1e-12)] = 0.0
    t[np.isclose(t, 1.0, atol=1e-12)] = 1.0
    P = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    P[rows, left] += 1.0 - t
    P[rows, left + 1] += t
    return P


def resample(f: Field, target: Grid) -> Field:
    """Bilinear interpolation of ``f`` onto the nodes of ``target``."""
    P = interp_matrix(f.grid.m, target.m)
    return Field(target, P @ f.as_array() @ P.T)


def l2_error(f: Field, fn, order: int = 4) -> float:
    """L2(Omega) distance between the bilinear interpolant of ``f`` and ``fn``.

    Integrated cell by cell with a tensor Gauss-Legendre rule, so the result
    is a continuum norm and includes the interpolation error.
    """
    g = f.grid
    xg, wg = np.polynomial.legendre.leggauss(order)
    t = 0.5 * (xg + 1.0)  # local coordinate in [0, 1]
    w = 0.5 * wg
    u = f.as_array()
    c = g.coords
    total = 0.0
    for a, ta in zip(w, t):          # y direction
        for b, tb in zip(w, t):      # x direction
            vals = ((1 - ta) * (1 - tb) * u[:-1, :-1] + (1 - ta) * tb * u[:-1, 1:]
                    + ta * (1 - tb) * u[1:, :-1] + ta * tb * u[1:, 1:])
            X = c[:-1][None, :] + tb * g.h
            Y = c[:-1][:, None] + ta * g.h
            total += a * b * np.sum((vals - fn(X, Y)) ** 2)
    return float(np.sqrt(total * g.h * g.h))
