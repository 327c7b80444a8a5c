"""Closed-form NtD spectrum for a concentric inclusion in the unit disk.

With conductivity ``sigma1`` inside radius ``rho`` and 1 outside, the NtD map
is diagonal in the Fourier basis with eigenvalues

    lambda_l = (1/l) * (1 - rho**(2l) mu) / (1 + rho**(2l) mu),
    mu = (1 - sqrt(sigma1)) / (1 + sqrt(sigma1)).

The first two eigenvalues determine ``rho`` and ``mu``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


class DiskDomainError(ValueError):
    pass


def contrast(sigma1: float) -> float:
    r = math.sqrt(sigma1)
    return (1.0 - r) / (1.0 + r)


@dataclass(frozen=True)
class DiskParams:
    rho: float
    sigma1: float
    mu: float = field(init=False)

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise DiskDomainError(f"inclusion radius must lie in (0, 1), got {self.rho}")
        if not 0.0 < self.sigma1 < 1.0:
            raise DiskDomainError(f"sigma1 must lie in (0, 1), got {self.sigma1}")
        object.__setattr__(self, "mu", contrast(self.sigma1))

    @classmethod
    def from_mu(cls, rho: float, mu: float) -> "DiskParams":
        if not 0.0 < mu < 1.0:
            raise DiskDomainError(f"mu must lie in (0, 1), got {mu}")
        sqrt_s = (1.0 - mu) / (1.0 + mu)
        p = cls(rho, sqrt_s * sqrt_s)
        object.__setattr__(p, "mu", mu)  # keep the exact contrast, not a re-derived one
        return p


def _ratio(p: DiskParams, l: int) -> float:
    t = p.rho ** (2 * l) * p.mu
    return (1.0 - t) / (1.0 + t)


def disk_eigenvalue(p: DiskParams, l: int) -> float:
    if l < 1:
        raise DiskDomainError(f"mode index must be >= 1, got {l}")
    return _ratio(p, l) / l


def ntd_diagonal(p: DiskParams, L: int, *, with_inverse_mode: bool = False) -> list[float]:
    """Leading 2L-1 diagonal entries in the basis cos t, sin t, cos 2t, ...

    By default the entries follow the printed diagonal matrix, which omits
    the 1/l factor of the eigenvalue formula; ``with_inverse_mode=True``
    restores it.
    """
    if L < 1:
        raise DiskDomainError("L must be >= 1")
    out = []
    for l in range(1, L + 1):
        v = _ratio(p, l) / (l if with_inverse_mode else 1)
        out.extend([v, v])
    return out[: 2 * L - 1]


def recover_rho_mu(lam1: float, lam2: float, *, verbatim: bool = False) -> DiskParams:
    """Invert the first two eigenvalues for (rho, mu).

    With ``t_l = (1 - l lam_l) / (1 + l lam_l) = rho**(2l) mu`` one gets
    ``rho = sqrt(t2 / t1)`` and ``mu = t1**2 / t2``. ``verbatim=True`` drops
    the factor l inside t_l, which only inverts the diagonal-matrix entries
    and not the eigenvalues themselves.
    """
    s1, s2 = (1.0, 1.0) if verbatim else (1.0, 2.0)
    t1 = (1.0 - s1 * lam1) / (1.0 + s1 * lam1)
    t2 = (1.0 - s2 * lam2) / (1.0 + s2 * lam2)
    if not (0.0 < t1 < 1.0 and 0.0 < t2 < 1.0):
        raise DiskDomainError(f"eigenvalues ({lam1}, {lam2}) are outside the admissible range")
    rho = math.sqrt(t2 / t1)
    mu = t1 * t1 / t2
    return DiskParams.from_mu(rho, mu)
