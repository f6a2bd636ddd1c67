"""The mean field functional, its gradient, and Moser-Trudinger probes."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .surface import (
    TWO_PI,
    Field,
    Point,
    SurfaceGrid,
    band_limited_field,
    dirichlet_energy,
    integrate,
    laplacian,
)

MT_COEFF = 1.0 / (16.0 * math.pi)


@dataclass(frozen=True)
class ProblemParams:
    rho1: float
    rho2: float
    h1: Field
    h2: Field

    def __post_init__(self) -> None:
        if not (math.isfinite(self.rho1) and math.isfinite(self.rho2)):
            raise ValueError("rho1, rho2 must be finite")
        if self.rho1 < 0 or self.rho2 < 0:
            raise ValueError("rho1, rho2 must be non-negative")
        if self.h1.grid != self.h2.grid:
            raise ValueError("h1 and h2 live on different grids")
        if self.h1.min() <= 0 or self.h2.min() <= 0:
            raise ValueError("weights h1, h2 must be strictly positive")

    @property
    def grid(self) -> SurfaceGrid:
        return self.h1.grid

    def with_rho(self, rho1: float, rho2: float) -> "ProblemParams":
        return ProblemParams(rho1, rho2, self.h1, self.h2)

    def swapped(self) -> "ProblemParams":
        return ProblemParams(self.rho2, self.rho1, self.h2, self.h1)


def uniform_params(grid: SurfaceGrid, rho1: float, rho2: float) -> ProblemParams:
    one = grid.constant(1.0)
    return ProblemParams(rho1, rho2, one, one)


def weight_preset(grid: SurfaceGrid, spec: str) -> Field:
    """Named positive weights: ``const``, ``cosx``, ``siny``, ``bump:cx,cy,w``."""
    name, _, arg = spec.partition(":")
    if name == "const" and not arg:
        return grid.constant(1.0)
    if name == "cosx" and not arg:
        return grid.sample(lambda X, Y: 1.0 + 0.5 * np.cos(TWO_PI * X))
    if name == "siny" and not arg:
        return grid.sample(lambda X, Y: 1.0 + 0.5 * np.sin(TWO_PI * Y))
    if name == "bump":
        try:
            cx, cy, w = (float(s) for s in arg.split(","))
        except ValueError:
            raise ValueError(f"bad bump preset {spec!r}; expected bump:cx,cy,w") from None
        if w <= 0:
            raise ValueError("bump width must be positive")
        d = grid.distances_from(Point(cx, cy))
        return Field(grid, 1.0 + np.exp(-(d**2) / (2 * w**2)))
    raise ValueError(f"unknown weight preset {spec!r}")


def average(u: Field) -> float:
    return integrate(u)


def log_integral_exp(w: Field, u: Field) -> float:
    """``log ∫ w e^u`` with the maximum of ``u`` factored out."""
    m = u.max()
    return m + math.log(float(np.sum(w.values * np.exp(u.values - m))) * u.grid.h**2)


def normalized_density(w: Field, u: Field) -> Field:
    """``w e^u / ∫ w e^u``."""
    e = w.values * np.exp(u.values - u.max())
    return Field(u.grid, e / (e.sum() * u.grid.h**2))


def functional_I(u: Field, p: ProblemParams) -> float:
    """½∫|∇u|² − ρ1 log∫h1 e^u − ρ2 log∫h2 e^{-u} + (ρ1 − ρ2) ū."""
    val = (
        0.5 * dirichlet_energy(u)
        - p.rho1 * log_integral_exp(p.h1, u)
        - p.rho2 * log_integral_exp(p.h2, -u)
        + (p.rho1 - p.rho2) * average(u)
    )
    if not math.isfinite(val):
        raise FloatingPointError("functional value is not finite")
    return val


def energy_difference(u: Field, v: Field, p: ProblemParams) -> float:
    """``I(u + v) - I(u)`` without cancellation.

    Each log-integral difference is ``log ∫ f e^{±v}`` with ``f`` the normalized
    density at ``u``, evaluated as ``log1p(∫ f expm1(±v))``.
    """
    quad = float(integrate(-laplacian(u) * v)) + 0.5 * dirichlet_energy(v)
    f1 = normalized_density(p.h1, u).values
    f2 = normalized_density(p.h2, -u).values
    h2 = u.grid.h**2
    d1 = _log_mean_exp(f1, v.values, h2)
    d2 = _log_mean_exp(f2, -v.values, h2)
    return quad - p.rho1 * d1 - p.rho2 * d2 + (p.rho1 - p.rho2) * average(v)


def _log_mean_exp(f: np.ndarray, v: np.ndarray, h2: float) -> float:
    vmax = float(v.max())
    if vmax > 1.0:
        # expm1 gains nothing for large increments
        return vmax + math.log(float(np.sum(f * np.exp(v - vmax))) * h2)
    return math.log1p(float(np.sum(f * np.expm1(v))) * h2)


def residual(u: Field, p: ProblemParams) -> Field:
    """``-Δu - ρ1(h1e^u/∫h1e^u - 1) + ρ2(h2e^{-u}/∫h2e^{-u} - 1)``; mean zero."""
    f1 = normalized_density(p.h1, u)
    f2 = normalized_density(p.h2, -u)
    return -laplacian(u) - p.rho1 * (f1 - 1.0) + p.rho2 * (f2 - 1.0)


def gradient_I(u: Field, p: ProblemParams) -> Field:
    """L² gradient of ``functional_I``; the same expression as ``residual``."""
    return residual(u, p)


def residual_norm(u: Field, p: ProblemParams) -> float:
    r = residual(u, p)
    return math.sqrt(integrate(r * r))


def weight_bound_holds(u: Field, h: Field) -> bool:
    """``log∫h e^u <= log∫e^u + log max h``."""
    lhs = log_integral_exp(h, u)
    rhs = log_integral_exp(u.grid.constant(1.0), u) + math.log(h.max())
    return lhs <= rhs + 1e-12 * max(1.0, abs(rhs))


@dataclass(frozen=True)
class MTProbeRow:
    sample_id: str
    dirichlet: float
    lhs: float
    slack: float


def mt2_lhs(u: Field) -> float:
    """``log∫e^{u-ū} + log∫e^{-u+ū}``."""
    one = u.grid.constant(1.0)
    c = u - average(u)
    return log_integral_exp(one, c) + log_integral_exp(one, -c)


def mt2_probe(u: Field, sample_id: str = "") -> MTProbeRow:
    d = dirichlet_energy(u)
    lhs = mt2_lhs(u)
    return MTProbeRow(sample_id, d, lhs, d * MT_COEFF - lhs)


@dataclass(frozen=True)
class ImprovedMTReport:
    frac_pos: tuple[float, float]
    frac_neg: tuple[float, float]
    region_distance: float
    hypotheses_hold: bool
    violations: tuple[str, ...]
    dirichlet: float
    lhs: float
    slack: Optional[float]


def region_distance(a: np.ndarray, b: np.ndarray, grid: SurfaceGrid) -> float:
    """Smallest geodesic distance between two node sets."""
    ia = np.argwhere(a)
    ib = np.argwhere(b)
    if len(ia) == 0 or len(ib) == 0:
        return math.inf
    # nodes are in [0, 1); boxsize makes the tree periodic
    tree = cKDTree(ia * grid.h, boxsize=1.0)
    d, _ = tree.query(ib * grid.h, k=1)
    return float(d.min())


def _region_pair(regions) -> list[np.ndarray]:
    masks = [np.asarray(r.values, dtype=bool) for r in regions]
    if len(masks) != 2:
        raise ValueError("exactly two regions are required")
    if np.any(masks[0] & masks[1]):
        raise ValueError("regions must be disjoint")
    return masks


def improved_mt_probe(
    u: Field,
    regions: tuple[Field, Field],
    gamma0: float,
    delta0: float,
    eps: float = 1.0,
    regions_neg: Optional[tuple[Field, Field]] = None,
) -> ImprovedMTReport:
    """Probe the doubled-constant inequality under the two-region spreading hypothesis.

    ``e^u`` must put at least ``gamma0`` of its mass in each of ``regions`` and
    ``e^{-u}`` in each of ``regions_neg`` (the same pair when omitted); each
    pair must be ``delta0`` apart.  When the hypothesis fails the report
    carries the violations and ``slack=None``.  ``region_distance`` is the
    smaller of the two pair distances.
    """
    g = u.grid
    pos = _region_pair(regions)
    neg = pos if regions_neg is None else _region_pair(regions_neg)
    one = g.constant(1.0)
    fp = normalized_density(one, u).values * g.h**2
    fn = normalized_density(one, -u).values * g.h**2
    frac_pos = tuple(float(fp[m].sum()) for m in pos)
    frac_neg = tuple(float(fn[m].sum()) for m in neg)
    dist = region_distance(pos[0], pos[1], g)
    if regions_neg is not None:
        dist = min(dist, region_distance(neg[0], neg[1], g))

    violations = []
    for k in range(2):
        if frac_pos[k] < gamma0:
            violations.append(f"e^u mass in region {k + 1} is {frac_pos[k]:.3g} < {gamma0}")
        if frac_neg[k] < gamma0:
            violations.append(f"e^-u mass in region {k + 1} is {frac_neg[k]:.3g} < {gamma0}")
    if dist < delta0:
        violations.append(f"region distance {dist:.3g} < {delta0}")

    d = dirichlet_energy(u)
    lhs = mt2_lhs(u)
    slack = None if violations else d / (32.0 * math.pi - eps) - lhs
    return ImprovedMTReport(frac_pos, frac_neg, dist, not violations, tuple(violations), d, lhs, slack)


def field_corpus(grid: SurfaceGrid, seed: int, count: int, amplitudes=(1, 2, 4, 8)):
    """Seeded ``(sample_id, field)`` pairs: band-limited draws times each amplitude."""
    rng = np.random.default_rng(seed)
    for i in range(count):
        v = band_limited_field(grid, rng)
        for a in amplitudes:
            yield f"s{seed}-{i}-a{a:g}", a * v


def directional_fd_error(u: Field, v: Field, p: ProblemParams, step: float = 1e-5) -> float:
    """Relative gap between ``<gradient_I(u), v>`` and a central difference of I along ``v``."""
    exact = integrate(gradient_I(u, p) * v)
    fd = (energy_difference(u, step * v, p) - energy_difference(u, -step * v, p)) / (2 * step)
    return abs(fd - exact) / max(abs(exact), 1e-300)


def gradient_check(p: ProblemParams, seed: int = 0, samples: int = 10, step: float = 1e-5) -> list[float]:
    """Finite-difference errors for seeded band-limited base points and directions."""
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(samples):
        u = band_limited_field(p.grid, rng)
        v = band_limited_field(p.grid, rng)
        errs.append(directional_fd_error(u, v, p, step))
    return errs
