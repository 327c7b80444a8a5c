import numpy as np
import pytest

from eitdsm.datagen import EllipseSpec, mask_from_ellipses
from eitdsm.elliptic import SigmaField
from eitdsm.mesh import make_grid

_ACCEPTANCE = []


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'} - {detail}"
    _ACCEPTANCE.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE):
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def disk_sigma(m: int, center=(0.0, 0.0), radius: float = 0.3, sigma1: float = 10.0) -> SigmaField:
    grid = make_grid(m)
    mask = mask_from_ellipses(grid, [EllipseSpec(tuple(center), radius, radius, 0.0)])
    return SigmaField.from_mask(grid, mask.values, 1.0, sigma1)
