import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eitdsm.analytic_disk import (
    DiskDomainError, DiskParams, contrast, disk_eigenvalue, ntd_diagonal, recover_rho_mu,
)

P = DiskParams(0.5, 0.25)


def test_contrast_value():
    assert P.mu == pytest.approx(1 / 3, abs=1e-15)


def test_eigenvalue_examples():
    assert disk_eigenvalue(P, 1) == pytest.approx(11 / 13, abs=1e-14)
    assert disk_eigenvalue(P, 2) == pytest.approx(47 / 98, abs=1e-14)
    small = DiskParams(1e-6, 0.25)
    for l in (1, 2, 5):
        assert disk_eigenvalue(small, l) == pytest.approx(1 / l, rel=1e-10)


def test_eigenvalue_rejects_mode_zero():
    with pytest.raises(DiskDomainError):
        disk_eigenvalue(P, 0)


def test_diagonal_entries():
    d = ntd_diagonal(P, 4)
    assert len(d) == 7
    assert d[0] == pytest.approx(11 / 13, abs=1e-14)
    assert d[0] == d[1] and d[2] == d[3] and d[4] == d[5]
    uniq = d[::2]
    assert all(a < b < 1 for a, b in zip(uniq, uniq[1:]))
    e = ntd_diagonal(P, 3, with_inverse_mode=True)
    assert e[2] == pytest.approx(disk_eigenvalue(P, 2))


def test_recovery_examples():
    r = recover_rho_mu(11 / 13, 47 / 98)
    assert abs(r.rho - 0.5) < 1e-12 and abs(r.mu - 1 / 3) < 1e-12
    p = DiskParams(0.9, 0.81)
    r = recover_rho_mu(disk_eigenvalue(p, 1), disk_eigenvalue(p, 2))
    assert abs(r.rho - 0.9) < 1e-10 and abs(r.mu - p.mu) < 1e-10
    with pytest.raises(DiskDomainError):
        recover_rho_mu(1.0, 0.4)


def test_verbatim_formula_does_not_invert():
    r = recover_rho_mu(disk_eigenvalue(P, 1), 2 * disk_eigenvalue(P, 2), verbatim=True)
    assert abs(r.rho - 0.5) < 1e-12
    with pytest.raises(DiskDomainError):
        # the printed algebra applied to the true second eigenvalue leaves the admissible range
        recover_rho_mu(disk_eigenvalue(P, 1), disk_eigenvalue(P, 2), verbatim=True)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95))
def test_round_trip_property(rho, mu):
    p = DiskParams.from_mu(rho, mu)
    r = recover_rho_mu(disk_eigenvalue(p, 1), disk_eigenvalue(p, 2))
    assert abs(r.rho - rho) < 1e-10 and abs(r.mu - mu) < 1e-10


@settings(max_examples=100, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95))
def test_eigenvalues_decrease(rho, s1):
    p = DiskParams(rho, s1)
    lam = [disk_eigenvalue(p, l) for l in range(1, 12)]
    assert all(a > b > 0 for a, b in zip(lam, lam[1:]))


def test_domain_errors():
    for bad in ((0.0, 0.5), (1.0, 0.5), (0.5, 1.0), (0.5, 0.0)):
        with pytest.raises(DiskDomainError):
            DiskParams(*bad)
