import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eitdsm.mesh import (
    GridError, PERIMETER, BoundarySignal, boundary_integral, boundary_signal, gradient,
    l2_error, make_grid, resample,
)


@pytest.mark.parametrize("m,h,M,nb,ni", [(3, 1.0, 9, 8, 1), (5, 0.5, 25, 16, 9), (65, 0.03125, 4225, 256, 3969)])
def test_grid_sizes(m, h, M, nb, ni):
    g = make_grid(m)
    assert g.h == h and g.size == M
    assert len(g.boundary) == nb == g.n_boundary
    assert len(g.interior) == ni


def test_grid_rejects_small():
    with pytest.raises(GridError):
        make_grid(2)


def test_node_ordering_row_major():
    g = make_grid(5)
    assert tuple(g.nodes[0]) == (-1.0, -1.0)
    assert tuple(g.nodes[1]) == (-0.5, -1.0)
    assert tuple(g.nodes[-1]) == (1.0, 1.0)
    assert abs(g.h * (g.m - 1) - 2.0) <= np.spacing(2.0)


def test_boundary_index_invariants():
    g = make_grid(17)
    b = g.boundary
    assert abs(b.weights.sum() - PERIMETER) < 1e-12 * PERIMETER
    assert np.all(np.diff(b.arclen) > 0)
    assert b.arclen[0] == 0.0 and b.arclen[-1] < PERIMETER
    assert tuple(g.nodes[b.order[0]]) == (-1.0, -1.0)
    # counter-clockwise: second node moves along +x on the bottom edge
    assert g.nodes[b.order[1]][0] > -1.0 and g.nodes[b.order[1]][1] == -1.0
    assert len(set(b.order.tolist())) == len(b)


def test_gradient_linear_exact():
    g = make_grid(5)
    d = gradient(g.field(lambda x, y: x))
    assert np.allclose(d.x.values, 1.0, atol=1e-14)
    assert np.allclose(d.y.values, 0.0, atol=1e-14)
    z = gradient(g.field(lambda x, y: 3.0 + 0 * x))
    assert np.all(z.x.values == 0) and np.all(z.y.values == 0)


def test_gradient_refinement():
    errs = []
    for m in (17, 33):
        g = make_grid(m)
        d = gradient(g.field(lambda x, y: x**2 - y**2))
        errs.append(np.max(np.abs(d.x.values - 2 * g.x)))
    # quadratics are differentiated exactly by the three-point stencils
    assert errs[1] < 1e-12 or errs[0] / errs[1] >= 3.5
    errs = []
    for m in (17, 33):
        g = make_grid(m)
        d = gradient(g.field(lambda x, y: np.sin(2 * x) * np.cos(y)))
        errs.append(np.max(np.abs(d.x.values - 2 * np.cos(2 * g.x) * np.cos(g.y))))
    assert errs[0] / errs[1] >= 3.5


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 10_000))
def test_gradient_linearity(a, b, seed):
    g = make_grid(9)
    r = np.random.default_rng(seed)
    f = g.field(lambda x, y: r.standard_normal(x.shape))
    h = g.field(lambda x, y: r.standard_normal(x.shape))
    lhs = gradient(f * a + h * b)
    gf, gh = gradient(f), gradient(h)
    scale = 1 + abs(a) + abs(b)
    assert np.allclose(lhs.x.values, a * gf.x.values + b * gh.x.values, atol=1e-12 * scale * 16)
    assert np.allclose(lhs.y.values, a * gf.y.values + b * gh.y.values, atol=1e-12 * scale * 16)


def test_boundary_integral_examples():
    g = make_grid(33)
    assert abs(boundary_integral(boundary_signal(g, lambda s: np.ones_like(s))) - 8.0) < 1e-12
    assert abs(boundary_integral(boundary_signal(g, lambda s: np.cos(2 * np.pi * s / 8)))) < 1e-10


def _edge_ramp(m):
    g = make_grid(m)
    return boundary_signal(g, lambda s: np.where(s < 2.0, s, 0.0))


def test_boundary_integral_edge_ramp_second_order():
    # oracle: Richardson-refined trapezoid of the same piecewise function on a fine grid
    def trap(n):
        s = np.linspace(0, 8, n + 1)
        v = np.where(s < 2.0, s, 0.0)
        v[-1] = v[0]
        return np.sum((v[:-1] + v[1:]) / 2) * 8 / n
    oracle = (4 * trap(2**16) - trap(2**15)) / 3
    errs = [abs(boundary_integral(_edge_ramp(m)) - oracle) for m in (17, 33)]
    hs = [2 / 16, 2 / 32]
    assert errs[0] <= 2 * hs[0] ** 2 * 8 and errs[1] <= 2 * hs[1] ** 2 * 8


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([5, 9, 17]))
def test_rotation_odd_signal_integrates_to_zero(seed, m):
    g = make_grid(m)
    n = g.n_boundary
    q = n // 4
    r = np.random.default_rng(seed).standard_normal(q)
    # alternate signs across the four 90-degree rotations
    v = np.concatenate([r, -r, r, -r])
    assert abs(boundary_integral(BoundarySignal(g, v))) < 1e-10


def test_resample_bilinear_exact():
    f = make_grid(9).field(lambda x, y: x * y + 2 * x - y + 1)
    c = resample(f, make_grid(5))
    assert np.allclose(c.values, c.grid.x * c.grid.y + 2 * c.grid.x - c.grid.y + 1, atol=1e-14)
    up = resample(c, make_grid(9))
    assert np.allclose(up.values, f.values, atol=1e-14)
    k = resample(make_grid(9).field(lambda x, y: 0 * x + 2.5), make_grid(17))
    assert np.allclose(k.values, 2.5)


def test_resample_round_trip_sin():
    f = make_grid(33).field(lambda x, y: np.sin(np.pi * x))
    back = resample(resample(f, make_grid(65)), make_grid(33))
    assert np.max(np.abs(back.values - f.values)) < 0.01


def test_l2_error_is_zero_for_bilinear():
    g = make_grid(9)
    f = g.field(lambda x, y: x * y)
    assert l2_error(f, lambda x, y: x * y) < 1e-13
