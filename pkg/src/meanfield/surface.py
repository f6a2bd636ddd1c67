"""Unit-area flat torus: grid, fields, quadrature and spectral calculus.

Nodes sit at ``(i*h, j*h)`` for ``i, j = 0..n-1``; ``values[i, j]`` is the sample at
``x = i*h, y = j*h``.  All integrals use uniform weights ``h**2``, which is the
trapezoid rule for periodic functions and integrates trigonometric polynomials
of degree below ``n`` exactly.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Callable, TextIO, Union

import numpy as np

TWO_PI = 2.0 * math.pi
#: largest distance between two points of the unit torus
DIAMETER = math.sqrt(2.0) / 2.0
MIN_RESOLUTION = 16


@dataclass(frozen=True)
class Point:
    """A point of the torus; coordinates are reduced into ``[0, 1)``."""

    x: float
    y: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", _wrap(self.x))
        object.__setattr__(self, "y", _wrap(self.y))

    def shifted(self, dx: float, dy: float) -> "Point":
        return Point(self.x + dx, self.y + dy)


def _wrap(c: float) -> float:
    c = float(c) % 1.0
    # -1e-18 % 1.0 == 1.0 in floating point
    return 0.0 if c >= 1.0 else c


@dataclass(frozen=True)
class SurfaceGrid:
    n: int

    def __post_init__(self) -> None:
        if not isinstance(self.n, (int, np.integer)) or self.n < MIN_RESOLUTION:
            raise ValueError(f"invalid resolution: n={self.n!r} (need an integer >= {MIN_RESOLUTION})")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def total_area(self) -> float:
        return 1.0

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n)

    @cached_property
    def coords(self) -> np.ndarray:
        """1-D node coordinates ``i*h``."""
        return np.arange(self.n) * self.h

    @cached_property
    def freqs(self) -> np.ndarray:
        """Integer wavenumbers in FFT order (full axis)."""
        return np.fft.fftfreq(self.n, d=1.0 / self.n)

    @cached_property
    def rfreqs(self) -> np.ndarray:
        """Integer wavenumbers of the last (half) axis of ``rfft2``."""
        return np.fft.rfftfreq(self.n, d=1.0 / self.n)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.coords, self.coords, indexing="ij")

    def ksq(self) -> np.ndarray:
        """``|k|**2`` on the rfft2 half spectrum, integer wavevectors."""
        return self.freqs[:, None] ** 2 + self.rfreqs[None, :] ** 2

    def half_spectrum_weights(self) -> np.ndarray:
        """Multiplicity of each rfft2 column inside the full spectrum."""
        w = np.full(self.rfreqs.shape, 2.0)
        w[0] = 1.0
        if self.n % 2 == 0:
            w[-1] = 1.0
        return w

    def distances_from(self, p: Point) -> np.ndarray:
        """Geodesic distance from ``p`` to every node."""
        dx = _min_image(self.coords - p.x)
        dy = _min_image(self.coords - p.y)
        return np.sqrt(dx[:, None] ** 2 + dy[None, :] ** 2)

    def node_point(self, i: int, j: int) -> Point:
        return Point(i * self.h, j * self.h)

    def field(self, values) -> "Field":
        return Field(self, np.asarray(values, dtype=float))

    def constant(self, c: float) -> "Field":
        return Field(self, np.full(self.shape, float(c)))

    def sample(self, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> "Field":
        """Evaluate ``fn(X, Y)`` on the nodes."""
        X, Y = self.mesh()
        return Field(self, np.broadcast_to(fn(X, Y), self.shape).astype(float))


@lru_cache(maxsize=16)
def build_grid(n: int) -> SurfaceGrid:
    """Unit-area periodic grid with spacing ``1/n``; rejects ``n < 16``."""
    return SurfaceGrid(n)


def grid_for_scale(t: float, points_per_scale: float = 4.0, n_min: int = MIN_RESOLUTION) -> SurfaceGrid:
    """Smallest power-of-two grid with ``h <= t / points_per_scale``."""
    if t <= 0:
        raise ValueError("scale must be positive")
    n = n_min
    while 1.0 / n > t / points_per_scale:
        n *= 2
    return build_grid(n)


class Field:
    """Real samples on the nodes of one grid.

    Arithmetic between fields checks that both live on the same grid.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: SurfaceGrid, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            raise ValueError(f"shape {values.shape} does not match grid {grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        self.grid = grid
        self.values = values

    def __repr__(self) -> str:
        return f"Field(n={self.grid.n}, min={self.values.min():.4g}, max={self.values.max():.4g})"

    def _other(self, other: Union["Field", float]) -> Union[np.ndarray, float]:
        if isinstance(other, Field):
            if other.grid != self.grid:
                raise ValueError("cannot combine fields from different grids")
            return other.values
        return float(other)

    def __add__(self, other):
        return Field(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return Field(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return Field(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return Field(self.grid, self.values / self._other(other))

    def __neg__(self):
        return Field(self.grid, -self.values)

    def apply(self, fn: Callable[[np.ndarray], np.ndarray]) -> "Field":
        return Field(self.grid, fn(self.values))

    def max(self) -> float:
        return float(self.values.max())

    def min(self) -> float:
        return float(self.values.min())


def _min_image(d: np.ndarray) -> np.ndarray:
    d = np.abs(np.asarray(d, dtype=float)) % 1.0
    return np.minimum(d, 1.0 - d)


def geodesic_distance(p: Point, q: Point) -> float:
    """Flat-torus distance: per-axis minimal image, then Euclidean norm."""
    dx = _min_image(p.x - q.x)
    dy = _min_image(p.y - q.y)
    return float(math.hypot(dx, dy))


def integrate(f: Field) -> float:
    return float(f.values.sum() * f.grid.h**2)


def l2_norm(f: Field) -> float:
    return math.sqrt(integrate(f * f))


def _rfft(f: Field) -> np.ndarray:
    # coefficients of the trigonometric interpolant
    return np.fft.rfft2(f.values) / f.grid.n**2


def dirichlet_energy(u: Field) -> float:
    """``∫|∇u|²`` computed spectrally (no factor 1/2)."""
    g = u.grid
    uh = _rfft(u)
    w = g.half_spectrum_weights()[None, :]
    return float(TWO_PI**2 * np.sum(w * g.ksq() * np.abs(uh) ** 2))


def laplacian(u: Field) -> Field:
    g = u.grid
    uh = np.fft.rfft2(u.values)
    return Field(g, np.fft.irfft2(-(TWO_PI**2) * g.ksq() * uh, s=g.shape))


def gradient(u: Field) -> tuple[Field, Field]:
    """Spectral partial derivatives ``(u_x, u_y)``."""
    g = u.grid
    uh = np.fft.fft2(u.values)
    kx = g.freqs[:, None]
    ky = g.freqs[None, :]
    if g.n % 2 == 0:
        # the Nyquist mode has no well-defined derivative of a real signal
        kx = np.where(np.abs(kx) == g.n // 2, 0.0, kx)
        ky = np.where(np.abs(ky) == g.n // 2, 0.0, ky)
    ux = np.fft.ifft2(1j * TWO_PI * kx * uh).real
    uy = np.fft.ifft2(1j * TWO_PI * ky * uh).real
    return Field(g, ux), Field(g, uy)


def inverse_laplacian(rhs: Field) -> Field:
    """Mean-zero ``u`` with ``-Δu = rhs`` minus its mean; no solvability check."""
    g = rhs.grid
    rh = np.fft.rfft2(rhs.values)
    ksq = g.ksq()
    ksq[0, 0] = 1.0
    uh = rh / (TWO_PI**2 * ksq)
    uh[0, 0] = 0.0
    return Field(g, np.fft.irfft2(uh, s=g.shape))


def solve_poisson(rhs: Field, tol: float = 1e-10) -> Field:
    """Mean-zero solution of ``-Δu = rhs``.

    Raises ``ValueError`` if ``rhs`` violates the solvability condition
    ``∫ rhs = 0`` (tolerance scaled by ``max(1, max|rhs|)``).
    """
    mean = integrate(rhs)
    scale = max(1.0, float(np.abs(rhs.values).max()))
    if abs(mean) > tol * scale:
        raise ValueError(f"mean not zero: ∫rhs = {mean:.3e}")
    return inverse_laplacian(rhs)


def ball_mask(grid: SurfaceGrid, p: Point, r: float) -> Field:
    """Indicator of the open geodesic ball ``B_p(r)`` on the nodes."""
    if r <= 0:
        raise ValueError("radius must be positive")
    return Field(grid, (grid.distances_from(p) < r).astype(float))


def annulus_mask(grid: SurfaceGrid, p: Point, r1: float, r2: float) -> Field:
    """Indicator of the open annulus ``A_p(r1, r2)``."""
    if not 0 <= r1 < r2:
        raise ValueError("need 0 <= r1 < r2")
    d = grid.distances_from(p)
    return Field(grid, ((d > r1) & (d < r2)).astype(float))


def write_field_csv(f: Field, out: Union[str, TextIO]) -> None:
    """Dump ``x,y,value`` rows in row-major node order."""
    if isinstance(out, str):
        with open(out, "w", newline="") as fh:
            write_field_csv(f, fh)
        return
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["x", "y", "value"])
    c = f.grid.coords
    for i in range(f.grid.n):
        for j in range(f.grid.n):
            w.writerow([f"{c[i]:.17g}", f"{c[j]:.17g}", f"{f.values[i, j]:.17g}"])


def read_field_csv(src: Union[str, TextIO]) -> Field:
    if isinstance(src, str):
        with open(src, newline="") as fh:
            return read_field_csv(fh)
    rows = list(csv.DictReader(src))
    n = math.isqrt(len(rows))
    if n * n != len(rows):
        raise ValueError("row count is not a perfect square")
    vals = np.array([float(r["value"]) for r in rows]).reshape(n, n)
    return Field(build_grid(n), vals)


def field_to_csv_string(f: Field) -> str:
    buf = io.StringIO()
    write_field_csv(f, buf)
    return buf.getvalue()


def band_limited_field(grid: SurfaceGrid, rng: np.random.Generator, kmax: float | None = None) -> Field:
    """Random trigonometric polynomial with modes ``0 < |k| <= kmax``.

    Cosine and sine amplitudes are standard normal; the sum is divided by the
    root of the mode count so that the field has unit variance.  ``kmax``
    defaults to ``n/4``.  Modes are visited in a fixed order, so the output is
    a deterministic function of the generator state.
    """
    if kmax is None:
        kmax = grid.n / 4
    kmax_i = int(math.floor(kmax))
    modes = [
        (kx, ky)
        for kx in range(0, kmax_i + 1)
        for ky in range(-kmax_i, kmax_i + 1)
        if (kx > 0 or ky > 0) and kx * kx + ky * ky <= kmax * kmax
    ]
    amps = rng.standard_normal((len(modes), 2))
    X, Y = grid.mesh()
    vals = np.zeros(grid.shape)
    for (kx, ky), (a, b) in zip(modes, amps):
        phase = TWO_PI * (kx * X + ky * Y)
        vals += a * np.cos(phase) + b * np.sin(phase)
    return Field(grid, vals / math.sqrt(len(modes)))
