"""Two-bubble test functions and the estimates attached to them.

``φ(y) = 2 log(1 + t̃2² d(x2,y)²) - 2 log(1 + t̃1² d(x1,y)²)`` with
``t̃(t) = 1/t`` below ``δ/2`` and a linear ramp to 0 at ``t = δ``.  Every scan
samples ``φ`` on a grid resolving the smallest bubble (``h <= t_min/4``) and
rejects under-resolved requests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import integrate as spi

from . import concentration as conc
from .energy import ProblemParams, functional_I, log_integral_exp, weight_preset
from .surface import (
    Field,
    Point,
    SurfaceGrid,
    _min_image,
    dirichlet_energy,
    geodesic_distance,
    grid_for_scale,
    integrate,
)

POINTS_PER_SCALE = 4.0
DEFAULT_DELTA = 0.1
DEFAULT_NU = 1e-3
ANTIPODAL = (Point(0.25, 0.25), Point(0.75, 0.75))


def t_tilde(t: float, delta: float = DEFAULT_DELTA) -> float:
    if not 0 < t <= delta:
        raise ValueError(f"scale t={t!r} must lie in (0, delta={delta}]")
    if t <= delta / 2:
        return 1.0 / t
    return -(4.0 / delta**2) * (t - delta)


@dataclass(frozen=True)
class TestParams:
    x1: Point
    t1: float
    x2: Point
    t2: float
    delta: float = DEFAULT_DELTA

    __test__ = False  # not a pytest class

    def __post_init__(self) -> None:
        for t in (self.t1, self.t2):
            if not 0 < t <= self.delta:
                raise ValueError(f"scale {t!r} must lie in (0, delta={self.delta}]")

    @property
    def t_min(self) -> float:
        return min(self.t1, self.t2)

    @property
    def d12(self) -> float:
        return geodesic_distance(self.x1, self.x2)

    def swapped(self) -> "TestParams":
        return TestParams(self.x2, self.t2, self.x1, self.t1, self.delta)

    def branch(self, nu: float) -> Optional[int]:
        """1 or 2 for the two pieces of ``X_ν``, ``None`` outside it."""
        if nu > self.delta / 100:
            return None
        tmin, tmax = self.t_min, max(self.t1, self.t2)
        if not nu**2 <= tmin <= nu:
            return None
        if tmax == self.delta:
            return 2
        if tmax < self.delta and (self.t1 - self.t2) ** 2 + self.d12**2 >= self.delta**4:
            return 1
        return None

    def in_X_nu(self, nu: float) -> bool:
        return self.branch(nu) is not None


def phi_values(theta: TestParams, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """``φ`` at arbitrary torus points (flat-torus geodesic distances)."""
    a1 = t_tilde(theta.t1, theta.delta) ** 2
    a2 = t_tilde(theta.t2, theta.delta) ** 2
    d1 = _min_image(X - theta.x1.x) ** 2 + _min_image(Y - theta.x1.y) ** 2
    d2 = _min_image(X - theta.x2.x) ** 2 + _min_image(Y - theta.x2.y) ** 2
    return 2.0 * np.log1p(a2 * d2) - 2.0 * np.log1p(a1 * d1)


def grid_for(theta: TestParams) -> SurfaceGrid:
    return grid_for_scale(theta.t_min, POINTS_PER_SCALE)


def require_resolved(theta: TestParams, grid: SurfaceGrid) -> None:
    if grid.h > theta.t_min / POINTS_PER_SCALE * (1 + 1e-12):
        raise ValueError(f"under-resolved: h={grid.h:.3g} > t_min/4={theta.t_min / 4:.3g}")


def phi(theta: TestParams, grid: Optional[SurfaceGrid] = None) -> Field:
    """Sample ``φ`` on ``grid`` (default: coarsest grid resolving both bubbles)."""
    grid = grid_for(theta) if grid is None else grid
    X, Y = grid.mesh()
    return Field(grid, phi_values(theta, X, Y))


# ---------------------------------------------------------------- estimates


@dataclass(frozen=True)
class EstimateRow:
    t1: float
    t2: float
    d12: float
    mean_phi: float
    dirichlet: float  # ½∫|∇φ|²
    log_int_exp: float  # log ∫h1 e^φ
    log_int_exp_neg: float  # log ∫h2 e^{-φ}
    I_value: float
    n: int
    theta: Optional[TestParams] = field(default=None, compare=False)


def estimate_row(theta: TestParams, rho1: float = 0.0, rho2: float = 0.0,
                 h1: str = "const", h2: str = "const", grid: Optional[SurfaceGrid] = None) -> EstimateRow:
    grid = grid_for(theta) if grid is None else grid
    require_resolved(theta, grid)
    u = phi(theta, grid)
    p = ProblemParams(rho1, rho2, weight_preset(grid, h1), weight_preset(grid, h2))
    d = 0.5 * dirichlet_energy(u)
    le = log_integral_exp(p.h1, u)
    ln = log_integral_exp(p.h2, -u)
    mean = integrate(u)
    I = d - rho1 * le - rho2 * ln + (rho1 - rho2) * mean
    row = EstimateRow(theta.t1, theta.t2, theta.d12, mean, d, le, ln, I, grid.n, theta)
    if not all(math.isfinite(v) for v in (mean, d, le, ln, I)):
        raise FloatingPointError(f"non-finite estimate row {row}")
    return row


def energy_scan(thetas: Iterable[TestParams], rho1: float, rho2: float,
                h1: str = "const", h2: str = "const") -> list[EstimateRow]:
    return [estimate_row(th, rho1, rho2, h1, h2) for th in thetas]


def log_scan(t_min: float, t_max: float, steps: int) -> np.ndarray:
    if steps < 2 or not 0 < t_min < t_max:
        raise ValueError("need steps >= 2 and 0 < t_min < t_max")
    return np.geomspace(t_min, t_max, steps)


def t1_family(ts: Sequence[float], delta: float = DEFAULT_DELTA,
              x1: Point = ANTIPODAL[0], x2: Point = ANTIPODAL[1]) -> list[TestParams]:
    """``t2 = δ`` fixed, ``t1`` scanned."""
    return [TestParams(x1, float(t), x2, delta, delta) for t in ts]


def t2_family(ts: Sequence[float], delta: float = DEFAULT_DELTA,
              x1: Point = ANTIPODAL[0], x2: Point = ANTIPODAL[1]) -> list[TestParams]:
    """``t1 = δ`` fixed, ``t2`` scanned."""
    return [TestParams(x1, delta, x2, float(t), delta) for t in ts]


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    target: float
    rel_error: float
    tolerance: float
    rows: tuple = ()

    @property
    def passed(self) -> bool:
        return self.rel_error <= self.tolerance


def fit_slope(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Ordinary least squares line ``y ≈ slope·x + intercept``."""
    slope, intercept = np.polyfit(np.asarray(x, float), np.asarray(y, float), 1)
    return float(slope), float(intercept)


def _fit(rows, xs, ys, target, tol) -> SlopeFit:
    s, c = fit_slope(xs, ys)
    return SlopeFit(s, c, target, abs(s - target) / abs(target), tol, tuple(rows))


def dirichlet_estimate_check(rows: Sequence[EstimateRow], axis: str = "t1", tol: float = 0.10) -> SlopeFit:
    """Slope of ``½∫|∇φ|²`` against ``log(1/t_axis)``; expected ``16π``."""
    t = np.array([getattr(r, axis) for r in rows])
    return _fit(rows, np.log(1 / t), [r.dirichlet for r in rows], 16 * math.pi, tol)


def mean_estimate_check(rows: Sequence[EstimateRow], axis: str = "t1", tol: float = 0.10) -> SlopeFit:
    """Slope of ``∫φ`` against ``log t_axis``; expected ``+4`` on ``t1``, ``-4`` on ``t2``."""
    t = np.array([getattr(r, axis) for r in rows])
    target = 4.0 if axis == "t1" else -4.0
    return _fit(rows, np.log(t), [r.mean_phi for r in rows], target, tol)


def energy_slope_check(rows: Sequence[EstimateRow], rho: float, axis: str = "t1", tol: float = 0.15) -> SlopeFit:
    """Slope of ``I(φ)`` against ``log t_axis``; expected ``2ρ - 16π``."""
    t = np.array([getattr(r, axis) for r in rows])
    return _fit(rows, np.log(t), [r.I_value for r in rows], 2 * rho - 16 * math.pi, tol)


# ---------------------------------------------------------------- integrals


def _cutoff(d: np.ndarray, a: float, b: float) -> np.ndarray:
    """Smooth step: 1 for ``d <= a``, 0 for ``d >= b``."""
    x = np.clip((b - d) / (b - a), 0.0, 1.0)

    def psi(z):
        with np.errstate(divide="ignore"):
            return np.where(z > 0, np.exp(-1.0 / np.where(z > 0, z, 1.0)), 0.0)

    p, q = psi(x), psi(1 - x)
    return p / (p + q)


def exp_integral(theta: TestParams, sign: int = 1, n_rad: int = 256, n_theta: int = 256,
                 n_bg: int = 256) -> float:
    """``∫ e^{±φ}`` by a partition of unity.

    Polar charts around ``x1`` and ``x2`` (graded radial rule, resolving any
    bubble width) carry the cut-off parts; the smooth remainder uses the
    periodic grid rule.  Valid for any scales, including far below grid reach.
    Geodesic distance kinks along each centre's cut locus, so the remainder
    converges only at second order in ``1/n_bg``.
    """
    d12 = theta.d12
    b = min(0.3, 0.45 * d12) if d12 > 0 else 0.3
    a = 0.4 * b
    centers = [theta.x1, theta.x2]
    scales = [theta.t1, theta.t2]

    def f(X, Y):
        return np.exp(sign * phi_values(theta, X, Y))

    def chi(k, X, Y):
        c = centers[k]
        d = np.hypot(_min_image(X - c.x), _min_image(Y - c.y))
        return _cutoff(d, a, b)

    # wide bubbles are left to the grid rule: a chart buys nothing there, and at
    # an antipodal pair it would straddle the other centre's cut locus
    charts = [k for k in (0, 1) if scales[k] < a / 2]

    def weight(k, X, Y):
        w = chi(k, X, Y)
        if k == 1 and 0 in charts:
            w = w * (1 - chi(0, X, Y))
        return w

    total = 0.0
    for k in charts:
        c = centers[k]
        t = scales[k]
        z, wz = np.polynomial.legendre.leggauss(n_rad)
        rho_in = 0.5 * t * (z + 1)
        w_in = 0.5 * t * wz * rho_in
        la, lb = math.log(t), math.log(b)
        rho_out = np.exp(0.5 * (lb - la) * z + 0.5 * (lb + la))
        w_out = 0.5 * (lb - la) * wz * rho_out**2
        rho = np.concatenate([rho_in, rho_out])
        wr = np.concatenate([w_in, w_out])
        th = np.arange(n_theta) * (2 * math.pi / n_theta)
        X = c.x + rho[:, None] * np.cos(th)[None, :]
        Y = c.y + rho[:, None] * np.sin(th)[None, :]
        total += float(np.sum(wr[:, None] * (2 * math.pi / n_theta) * f(X, Y) * weight(k, X, Y)))
    g = grid_for_scale(1.0, n_min=n_bg)
    X, Y = g.mesh()
    rest = f(X, Y) * (1 - sum(weight(k, X, Y) for k in charts))
    total += float(rest.sum() * g.h**2)
    return total


def exp_integral_grid(theta: TestParams, sign: int = 1, grid: Optional[SurfaceGrid] = None) -> float:
    """``∫ e^{±φ}`` by the plain grid rule on a resolving grid."""
    grid = grid_for(theta) if grid is None else grid
    require_resolved(theta, grid)
    u = phi(theta, grid)
    return math.exp(log_integral_exp(grid.constant(1.0), sign * u))


def integral_bounds_check(theta: TestParams) -> float:
    """``∫e^φ · t2⁴/t1²``, which stays within ``[1/C, C]`` over ``X_ν``."""
    return exp_integral(theta, 1) * theta.t2**4 / theta.t1**2


def integral_bounds_check_neg(theta: TestParams) -> float:
    """The mirrored quantity ``∫e^{-φ} · t1⁴/t2²``."""
    return exp_integral(theta, -1) * theta.t1**4 / theta.t2**2


@dataclass(frozen=True)
class RatioScan:
    ts: tuple
    ratios: tuple
    spread: float  # max/min

    @property
    def decades(self) -> float:
        return math.log10(max(self.ts) / min(self.ts))


def ratio_scan(ts: Sequence[float], delta: float = DEFAULT_DELTA, mirrored: bool = False) -> RatioScan:
    if mirrored:
        rs = [integral_bounds_check_neg(th) for th in t2_family(ts, delta)]
    else:
        rs = [integral_bounds_check(th) for th in t1_family(ts, delta)]
    return RatioScan(tuple(float(t) for t in ts), tuple(rs), max(rs) / min(rs))


def planar_bubble_constant(lam: float) -> float:
    """``λ² ∫_{ℝ²} (1 + λ²|x|²)⁻² dx`` in polar coordinates; equals π."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    # split at the bubble scale 1/λ so the adaptive rule sees both regimes
    f = lambda r: 2 * math.pi * r / (1 + (lam * r) ** 2) ** 2  # noqa: E731
    inner, _ = spi.quad(f, 0, 1 / lam, epsabs=0, epsrel=1e-13, limit=200)
    outer, _ = spi.quad(f, 1 / lam, math.inf, epsabs=0, epsrel=1e-13, limit=200)
    return lam**2 * (inner + outer)


# ---------------------------------------------------------------- mass scales


@dataclass(frozen=True)
class MassScaleReport:
    t1: float
    t2: float
    rs: tuple
    sup_masses: tuple
    constants: tuple  # sup mass / (r² t1²/t2⁴)
    c_eps: float  # smallest c with ∫_{B(c t1)} e^φ >= (1-eps)∫e^φ
    eps: float


def mass_scale_check(theta: TestParams, rs: Sequence[float] = (1, 2, 4), eps: float = 0.1,
                     grid: Optional[SurfaceGrid] = None) -> MassScaleReport:
    grid = grid_for(theta) if grid is None else grid
    require_resolved(theta, grid)
    ef = phi(theta, grid).apply(np.exp)
    sups = []
    for r in rs:
        sups.append(float(conc.ball_masses(ef, r * theta.t1).max()))
    unit = theta.t1**2 / theta.t2**4
    consts = tuple(s / (r**2 * unit) for s, r in zip(sups, rs))
    d = grid.distances_from(theta.x1).ravel()
    order = np.argsort(d, kind="stable")
    cum = np.cumsum(ef.values.ravel()[order])
    k = int(np.searchsorted(cum, (1 - eps) * cum[-1]))
    # the open ball of radius just above d[order[k]] holds that mass
    c_eps = float(d[order[k]] / theta.t1)
    return MassScaleReport(theta.t1, theta.t2, tuple(rs), tuple(sups), consts, c_eps, eps)


# ---------------------------------------------------------------- ψ relation


@dataclass(frozen=True)
class PsiRow:
    t1: float
    t2: float
    sigma1: float
    sigma2: float
    apex1: bool
    apex2: bool
    dist1: Optional[float]  # d(β1, x1), None at the apex
    dist2: Optional[float]
    constant: float


def _psi_density(theta: TestParams, sign: int, cfg: "conc.ConcConfig", min_n: int) -> "conc.ConcentrationMap":
    t = theta.t1 if sign > 0 else theta.t2
    grid = grid_for_scale(t, POINTS_PER_SCALE, n_min=min_n)
    X, Y = grid.mesh()
    u = Field(grid, sign * phi_values(theta, X, Y))
    return conc.concentration_map(conc.density_from_exponent(u), cfg)


def psi_of_phi_check(thetas: Iterable[TestParams], cfg: "conc.ConcConfig", min_n: int = 64) -> list[PsiRow]:
    """``ψ`` of normalized ``e^{φ}`` and ``e^{-φ}`` against ``(x_i, t_i)``.

    Each density is sampled on the grid resolving its own bubble (``h <= t_i/4``).
    The row constant is the smallest ``C`` with ``1/C <= σ_i/t_i <= C`` and
    ``d(β_i, x_i) <= C t_i`` for both indices.
    """
    rows = []
    for th in thetas:
        m1 = _psi_density(th, 1, cfg, min_n)
        m2 = _psi_density(th, -1, cfg, min_n)
        cs = []
        out = []
        for m, x, t in ((m1, th.x1, th.t1), (m2, th.x2, th.t2)):
            ratio = m.scale / t
            cs += [ratio, 1 / ratio]
            dist = None
            if not m.at_apex:
                dist = geodesic_distance(m.beta, x)
                cs.append(dist / t)
            out.append((m.scale, m.at_apex, dist))
        rows.append(PsiRow(th.t1, th.t2, out[0][0], out[1][0], out[0][1], out[1][1],
                           out[0][2], out[1][2], max(cs)))
    return rows


# ---------------------------------------------------------------- X_ν sampler


def sample_Xnu(nu: float, delta: float = DEFAULT_DELTA, count: int = 100, seed: int = 0) -> list[TestParams]:
    """Seeded draws from ``X_ν``, alternating between its two pieces."""
    if nu > delta / 100:
        raise ValueError(f"nu={nu} exceeds delta/100={delta / 100}")
    if nu <= 0:
        raise ValueError("nu must be positive")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        tmin = math.exp(rng.uniform(math.log(nu**2), math.log(nu)))
        while True:
            x1 = Point(*rng.uniform(0, 1, 2))
            x2 = Point(*rng.uniform(0, 1, 2))
            if i % 2 == 0:
                tmax = delta
            else:
                tmax = float(rng.uniform(tmin, delta))
                if tmax >= delta:
                    continue
            if rng.uniform() < 0.5:
                th = TestParams(x1, tmin, x2, tmax, delta)
            else:
                th = TestParams(x1, tmax, x2, tmin, delta)
            if th.branch(nu) == (2 if i % 2 == 0 else 1):
                out.append(th)
                break
    return out


def apex_params(delta: float = DEFAULT_DELTA) -> TestParams:
    """``t1 = t2 = δ``, for which ``φ ≡ 0``."""
    return TestParams(ANTIPODAL[0], delta, ANTIPODAL[1], delta, delta)


def with_scales(theta: TestParams, t1: float, t2: float) -> TestParams:
    return replace(theta, t1=t1, t2=t2)
