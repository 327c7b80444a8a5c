"""Random inclusions, boundary currents, noisy data and the EITD file format.

A record stores, for each current g_l, the noisy boundary voltage and the
harmonic extension phi_l of the noisy difference data together with its
gradient. Everything a record contains is fixed by (seed, sample index).
"""

from __future__ import annotations

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .elliptic import SigmaField, harmonic_extension, ntd_apply
from .mesh import PERIMETER, BoundarySignal, Field, Grid, boundary_signal, gradient, make_grid

MAGIC = b"EITD"
VERSION = 1
HEADER = struct.Struct("<4sBIIIfQI")  # magic, version, m, L, n, tau, seed, n_ellipses
AXIS1_RANGE = (0.1, 0.2)
AXIS2_RANGE = (0.2, 0.4)
CENTER_RANGE = (-0.55, 0.55)
BOX = 0.95
MAX_TRIES = 1000


class SamplingError(RuntimeError):
    pass


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class EllipseSpec:
    center: tuple
    a: float
    b: float
    angle: float

    def extent(self) -> tuple:
        """Half-widths of the axis-aligned bounding box."""
        c, s = np.cos(self.angle), np.sin(self.angle)
        return (float(np.hypot(self.a * c, self.b * s)), float(np.hypot(self.a * s, self.b * c)))

    def fits(self, box: float = BOX) -> bool:
        ex, ey = self.extent()
        return abs(self.center[0]) + ex < box and abs(self.center[1]) + ey < box

    def contains(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        c, s = np.cos(self.angle), np.sin(self.angle)
        dx, dy = x - self.center[0], y - self.center[1]
        u = c * dx + s * dy
        v = -s * dx + c * dy
        return (u / self.a) ** 2 + (v / self.b) ** 2 <= 1.0


@dataclass(frozen=True)
class InclusionSample:
    ellipses: tuple
    mask: Field
    sigma: SigmaField


@dataclass(frozen=True)
class NoiseConfig:
    tau: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")


@dataclass(frozen=True, eq=False)
class DatasetRecord:
    """One sample. Arrays are float32; per-current arrays have a leading L axis."""

    mask: np.ndarray
    g: np.ndarray
    f: np.ndarray
    phi: np.ndarray
    phi_x: np.ndarray
    phi_y: np.ndarray

    @property
    def m(self) -> int:
        return self.mask.shape[-1]

    @property
    def n_currents(self) -> int:
        return self.g.shape[0]

    def features(self) -> np.ndarray:
        """(3L, m, m) network input: phi_l, d_x phi_l, d_y phi_l per current."""
        return np.concatenate(
            [np.stack([self.phi[l], self.phi_x[l], self.phi_y[l]]) for l in range(self.n_currents)]
        )

    def equals(self, other: "DatasetRecord") -> bool:
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("mask", "g", "f", "phi", "phi_x", "phi_y")
        )


def mask_from_ellipses(grid: Grid, ellipses) -> Field:
    inside = np.zeros(grid.size, dtype=bool)
    for e in ellipses:
        inside |= e.contains(grid.x, grid.y)
    return Field(grid, inside.astype(float))


def sample_ellipse(rng) -> EllipseSpec:
    a = rng.uniform(*AXIS1_RANGE)
    b = rng.uniform(*AXIS2_RANGE)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    for _ in range(MAX_TRIES):
        e = EllipseSpec(tuple(rng.uniform(*CENTER_RANGE, size=2)), a, b, angle)
        if e.fits():
            return e
    raise SamplingError(f"no admissible ellipse center after {MAX_TRIES} tries")


def sample_inclusion(rng, n_ellipses: int = 4, grid: Grid | None = None,
                     sigma0: float = 1.0, sigma1: float = 10.0) -> InclusionSample:
    if n_ellipses < 1:
        raise ValueError("n_ellipses must be >= 1")
    grid = grid or make_grid(65)
    ellipses = tuple(sample_ellipse(rng) for _ in range(n_ellipses))
    mask = mask_from_ellipses(grid, ellipses)
    return InclusionSample(ellipses, mask, SigmaField.from_mask(grid, mask.values, sigma0, sigma1))


def boundary_currents(grid: Grid, L: int) -> list:
    """Unit-norm arc-length cosines of frequencies 1..L."""
    if L < 1:
        raise ValueError("L must be >= 1")
    out = []
    for l in range(1, L + 1):
        g = boundary_signal(grid, lambda s, l=l: np.cos(2.0 * np.pi * l * s / PERIMETER))
        out.append(g * (1.0 / g.norm()))
    return out


def add_noise(clean: BoundarySignal, cfg: NoiseConfig, rng) -> BoundarySignal:
    """Multiplicative noise ``clean * (1 + tau G)`` with i.i.d. standard normal G."""
    if cfg.tau == 0.0:
        return clean
    G = rng.standard_normal(clean.values.size)
    return BoundarySignal(clean.grid, clean.values * (1.0 + cfg.tau * G))


def _centered_f32(values: np.ndarray, boundary: np.ndarray) -> np.ndarray:
    # re-center after rounding so the stored field keeps a zero boundary mean
    out = values.astype(np.float32)
    out -= np.float32(out[boundary].astype(np.float64).mean())
    # then nudge single entries by one ulp while that shrinks the residual sum
    for _ in range(8 * len(boundary)):
        r = out[boundary].astype(np.float64).sum()
        step = np.spacing(np.abs(out[boundary])).astype(np.float64)
        ok = step <= 2.0 * abs(r)
        if r == 0.0 or not ok.any():
            break
        j = boundary[np.flatnonzero(ok)[np.argmax(step[ok])]]
        out[j] = np.nextafter(out[j], np.float32(-np.inf if r > 0 else np.inf))
    return out


def make_sample(sigma: SigmaField, currents, cfg: NoiseConfig, rng) -> DatasetRecord:
    grid = sigma.grid
    bg = sigma.background()
    order = grid.boundary.order
    g_rows, f_rows, phis, gxs, gys = [], [], [], [], []
    for g in currents:
        f_bg = ntd_apply(bg, g)
        diff = ntd_apply(sigma, g) - f_bg
        noisy = add_noise(diff, cfg, rng)
        noisy = noisy.zero_mean()
        phi = harmonic_extension(noisy)
        grad = gradient(phi)
        g_rows.append(g.values.astype(np.float32))
        f_rows.append((f_bg + noisy).values.astype(np.float32))
        phis.append(_centered_f32(phi.values, order).reshape(grid.m, grid.m))
        gxs.append(grad.x.as_array().astype(np.float32))
        gys.append(grad.y.as_array().astype(np.float32))
    mask = (sigma.values != sigma.sigma0).astype(np.float32).reshape(grid.m, grid.m)
    return DatasetRecord(mask, np.stack(g_rows), np.stack(f_rows),
                         np.stack(phis), np.stack(gxs), np.stack(gys))


@dataclass(frozen=True)
class GenConfig:
    n: int
    m: int = 65
    L: int = 1
    tau: float = 0.0
    seed: int = 0
    n_ellipses: int = 4


def sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def generate_one(cfg: GenConfig, index: int) -> DatasetRecord:
    rng = sample_rng(cfg.seed, index)
    grid = make_grid(cfg.m)
    inc = sample_inclusion(rng, cfg.n_ellipses, grid)
    return make_sample(inc.sigma, boundary_currents(grid, cfg.L), NoiseConfig(cfg.tau, cfg.seed), rng)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("EIT_THREADS", "1")))
    except ValueError:
        return 1


def generate(cfg: GenConfig, threads: int | None = None) -> list:
    threads = threads or worker_count()
    if threads == 1:
        return [generate_one(cfg, i) for i in range(cfg.n)]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(lambda i: generate_one(cfg, i), range(cfg.n)))


# ---------------------------------------------------------------------------
# EITD files


def write_dataset(path, records, *, m: int, L: int, tau: float, seed: int, n_ellipses: int = 4) -> None:
    nb = 4 * (m - 1)
    parts = [HEADER.pack(MAGIC, VERSION, m, L, len(records), tau, seed, n_ellipses)]
    for r in records:
        if r.mask.shape != (m, m) or r.g.shape != (L, nb):
            raise FormatError(f"record shape {r.mask.shape}/{r.g.shape} does not match m={m}, L={L}")
        parts.append(r.mask.astype("<f4").tobytes())
        for l in range(L):
            for arr in (r.g[l], r.f[l], r.phi[l], r.phi_x[l], r.phi_y[l]):
                parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


@dataclass(frozen=True)
class DatasetHeader:
    m: int
    L: int
    n: int
    tau: float
    seed: int
    n_ellipses: int


def read_header(buf: bytes) -> DatasetHeader:
    if len(buf) < HEADER.size:
        raise FormatError(f"file shorter than the {HEADER.size}-byte header")
    magic, version, m, L, n, tau, seed, ne = HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    return DatasetHeader(m, L, n, float(tau), seed, ne)


def read_dataset(path) -> tuple:
    """Return ``(header, records)``; the whole file is validated before parsing."""
    with open(path, "rb") as fh:
        buf = fh.read()
    hdr = read_header(buf)
    m, L, nb = hdr.m, hdr.L, 4 * (hdr.m - 1)
    per = m * m + L * (2 * nb + 3 * m * m)
    expected = HEADER.size + 4 * per * hdr.n
    if len(buf) != expected:
        raise FormatError(f"expected {expected} bytes for {hdr.n} samples, found {len(buf)}")
    data = np.frombuffer(buf, dtype="<f4", offset=HEADER.size).astype(np.float32)
    records = []
    for k in range(hdr.n):
        chunk = data[k * per:(k + 1) * per]
        mask = chunk[: m * m].reshape(m, m)
        pos = m * m
        rows = {key: [] for key in ("g", "f", "phi", "phi_x", "phi_y")}
        for _ in range(L):
            for key, size, shape in (("g", nb, (nb,)), ("f", nb, (nb,)), ("phi", m * m, (m, m)),
                                     ("phi_x", m * m, (m, m)), ("phi_y", m * m, (m, m))):
                rows[key].append(chunk[pos:pos + size].reshape(shape))
                pos += size
        records.append(DatasetRecord(mask.copy(), **{k2: np.stack(v) for k2, v in rows.items()}))
    return hdr, records


def load_arrays(records) -> tuple:
    """Stack records into float64 ``(features, masks)`` arrays of shape (N, 3L, m, m), (N, 1, m, m)."""
    X = np.stack([r.features() for r in records]).astype(np.float64)
    Y = np.stack([r.mask[None] for r in records]).astype(np.float64)
    return X, Y
