"""Center of mass and scale of concentration of a unit-mass positive density.

For a density ``f`` and a node ``x`` the local scale ``σ(x, f)`` balances the mass
inside ``B_x(σ)`` against the mass outside ``B_x(R0 σ)``.  With sharp node masks
the balance function

    g(s) = ∫_{B_x(s)} f - ∫_{B_x(R0 s)^c} f

is a nondecreasing step function whose jumps sit at node distances ``d`` and at
``d / R0``.  Those breakpoints depend only on the grid (the torus is
homogeneous), so the root is located exactly by a binary search over one shared
sorted breakpoint table.  The search plays the role of bisection and ends on
the jump itself instead of at a tolerance.

Evaluating ``σ(x, f)`` at every node costs ``O(n^4)``.  For fine grids a ladder
of radii is swept with FFT ball convolutions to bracket ``σ(x, f)`` at all nodes,
and only the nodes that can influence ``σ(f)``, ``S(f)`` or ``η(f)`` are refined.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .surface import (
    DIAMETER,
    TWO_PI,
    Field,
    Point,
    SurfaceGrid,
    band_limited_field,
    build_grid,
    geodesic_distance,
)

log = logging.getLogger(__name__)

EXACT_ALL_MAX_N = 64


class CalibrationError(RuntimeError):
    """The mass threshold tau leaves S(f) empty (or all weights vanish)."""


class ProjectionUndefined(RuntimeError):
    """The embedded center of mass sits on the axis of a circle factor."""


@dataclass(frozen=True)
class ConcConfig:
    R: float = 2.0
    delta: float = 0.1
    tau: float = 0.05
    # kept for interface compatibility: the breakpoint search is exact
    bisect_tol: float = 1e-10

    def __post_init__(self) -> None:
        if not self.R > 1:
            raise ValueError("R must exceed 1")
        if not 0 < self.delta < 0.35:
            raise ValueError("delta must lie in (0, 0.35)")
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")

    @property
    def R0(self) -> float:
        return 3.0 * self.R

    def with_tau(self, tau: float) -> "ConcConfig":
        return ConcConfig(self.R, self.delta, tau, self.bisect_tol)


@dataclass(frozen=True, eq=False)
class ConePoint:
    """A point of the cone over the torus; every scale >= delta is one apex."""

    beta: Optional[Point]
    sigma: float
    delta: float

    def __post_init__(self) -> None:
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if (self.beta is None) != self.at_apex:
            raise ValueError("beta is defined exactly when sigma < delta")

    @property
    def at_apex(self) -> bool:
        return self.sigma >= self.delta

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ConePoint):
            return NotImplemented
        if self.at_apex and other.at_apex:
            return True
        return self.at_apex == other.at_apex and self.beta == other.beta and self.sigma == other.sigma

    def __hash__(self) -> int:
        return hash("apex") if self.at_apex else hash((self.beta, self.sigma))


def as_density(f: Field, tol: float = 1e-10) -> Field:
    """Validate strict positivity and unit mass."""
    if f.min() <= 0:
        raise ValueError("density must be strictly positive at every node")
    mass = float(f.values.sum()) * f.grid.h**2
    if abs(mass - 1.0) > tol:
        raise ValueError(f"density mass {mass!r} is not 1")
    return f


def normalize(f: Field) -> Field:
    return Field(f.grid, f.values / (f.values.sum() * f.grid.h**2))


def density_from_exponent(u: Field) -> Field:
    """``e^u / ∫e^u``."""
    e = np.exp(u.values - u.max())
    return Field(u.grid, e / (e.sum() * u.grid.h**2))


def bubble_density(grid: SurfaceGrid, center: Point, w: float) -> Field:
    """Normalized ``(1 + d²/w²)^-2`` around ``center``.

    In the plane its balance scale is ``w/√6`` and ``T = 1/7`` there.
    """
    if w <= 0:
        raise ValueError("bubble width must be positive")
    d2 = grid.distances_from(center) ** 2
    return normalize(Field(grid, 1.0 / (1.0 + d2 / w**2) ** 2))


def smooth_field(grid: SurfaceGrid, rng: np.random.Generator, kmax: float = 4.0) -> Field:
    """Unit-variance random field with few modes, for densities ``e^{±u}``."""
    return band_limited_field(grid, rng, kmax)


# ---------------------------------------------------------------- tables


@dataclass(frozen=True)
class _Tables:
    n: int
    dist: np.ndarray  # distances of node offsets, sorted
    di: np.ndarray
    dj: np.ndarray
    dist_grid: np.ndarray  # distance of offset (i, j) from the origin node
    bp: np.ndarray  # breakpoints of g, sorted
    cin: np.ndarray  # #offsets with d <= bp
    cout: np.ndarray  # #offsets with d <= R0 * bp


@lru_cache(maxsize=8)
def _tables(n: int, R0: float) -> _Tables:
    i = np.arange(n)
    m = np.minimum(i, n - i).astype(float)
    dist_grid = np.sqrt(m[:, None] ** 2 + m[None, :] ** 2) / n
    flat = dist_grid.ravel()
    order = np.argsort(flat, kind="stable")
    dist = flat[order]
    oi, oj = np.divmod(order, n)
    di = np.where(oi > n // 2, oi - n, oi)
    dj = np.where(oj > n // 2, oj - n, oj)

    uniq = np.unique(dist)
    c_self = np.searchsorted(dist, uniq, side="right")
    bp = np.concatenate([uniq, uniq / R0])
    cin = np.concatenate([c_self, np.searchsorted(dist, uniq / R0, side="right")])
    cout = np.concatenate([np.searchsorted(dist, uniq * R0, side="right"), c_self])
    o = np.argsort(bp, kind="stable")
    bp, cin, cout = bp[o], cin[o], cout[o]
    # products like R0 * (d / R0) may be off by an ulp; counts must stay monotone
    cin = np.maximum.accumulate(cin)
    cout = np.maximum.accumulate(cout)
    return _Tables(n, dist, di, dj, dist_grid, bp, cin, cout)


def _ball_mass_all(w_hat: np.ndarray, dist_grid: np.ndarray, radius: float, closed: bool = False) -> np.ndarray:
    """Mass of every node's ball of the given radius (FFT convolution)."""
    mask = dist_grid <= radius if closed else dist_grid < radius
    n = dist_grid.shape[0]
    return np.fft.irfft2(w_hat * np.fft.rfft2(mask.astype(float)), s=(n, n))


def ball_masses(f: Field, radius: float) -> np.ndarray:
    """``∫_{B_x(radius)} f`` for every node ``x`` (open balls)."""
    t = _tables(f.grid.n, 1.0)
    w = f.values * f.grid.h**2
    return _ball_mass_all(np.fft.rfft2(w), t.dist_grid, radius)


# ---------------------------------------------------------------- exact σ


def _exact(w: np.ndarray, nodes: np.ndarray, tab: _Tables, h: float,
           lo_idx: np.ndarray, hi_idx: np.ndarray, batch_elems: int = 2_000_000):
    """Exact ``σ(x, f)`` and ``T(x, f)`` for the given flat node indices.

    ``lo_idx``/``hi_idx`` bracket the breakpoint index of the root; brackets
    that turn out wrong are widened to the full table.
    """
    n = tab.n
    total = float(w.sum())
    wflat = w.ravel()
    sig = np.empty(len(nodes))
    T = np.empty(len(nodes))
    nb = len(tab.bp)
    order = np.argsort(hi_idx, kind="stable")
    pos = 0
    while pos < len(order):
        K = int(tab.cout[hi_idx[order[pos]]])
        B = max(1, batch_elems // max(K, 1))
        sel = order[pos:pos + B]
        K = int(tab.cout[hi_idx[sel]].max())
        K = max(K, int(tab.cin[hi_idx[sel]].max()), 1)
        ii, jj = np.divmod(nodes[sel], n)
        idx = ((ii[:, None] + tab.di[None, :K]) % n) * n + (jj[:, None] + tab.dj[None, :K]) % n
        cm = np.zeros((len(sel), K + 1))
        np.cumsum(wflat[idx], axis=1, out=cm[:, 1:])
        rows = np.arange(len(sel))

        def G(q):
            return cm[rows, tab.cin[q]] + cm[rows, np.minimum(tab.cout[q], K)] - total

        lo = lo_idx[sel].copy()
        hi = hi_idx[sel].copy()
        # brackets from the ladder are verified; a bad one falls back to the full range
        bad = G(hi) < 0
        bad |= (lo > 0) & (G(np.maximum(lo - 1, 0)) >= 0)
        if np.any(bad):
            if K < len(tab.dist):
                # re-run the offending nodes with the full window
                bad_nodes = sel[bad]
                s2, t2 = _exact(w, nodes[bad_nodes], tab, h,
                                np.zeros(len(bad_nodes), dtype=int),
                                np.full(len(bad_nodes), nb - 1), batch_elems)
                sig[bad_nodes] = s2
                T[bad_nodes] = t2
                keep = ~bad
                sel, lo, hi, cm, rows = sel[keep], lo[keep], hi[keep], cm[keep], np.arange(int(keep.sum()))
            else:
                lo[bad] = 0
                hi[bad] = nb - 1
        while np.any(lo < hi):
            mid = (lo + hi) // 2
            ok = G(mid) >= 0
            hi = np.where(ok, mid, hi)
            lo = np.where(ok, lo, mid + 1)
        s = np.maximum(tab.bp[hi], h / 2)
        cnt = np.searchsorted(tab.dist, s, side="left")
        sig[sel] = s
        T[sel] = cm[rows, np.minimum(cnt, K)]
        pos += B
    return sig, T


def _g_direct(f: Field, x: Point, s: float, R0: float) -> float:
    d = f.grid.distances_from(x)
    w = f.values * f.grid.h**2
    return float(w[d < s].sum() - w[d >= R0 * s].sum())


def balance(f: Field, x: Point, s: float, cfg: ConcConfig) -> float:
    """``g(s) = ∫_{B_x(s)} f - ∫_{B_x(R0 s)^c} f`` by direct node masks."""
    return _g_direct(f, x, s, cfg.R0)


def _node_index(grid: SurfaceGrid, x: Point) -> int:
    i = int(round(x.x * grid.n)) % grid.n
    j = int(round(x.y * grid.n)) % grid.n
    return i * grid.n + j


def sigma_and_T(x: Point, f: Field, cfg: ConcConfig) -> tuple[float, float]:
    """``(σ(x, f), T(x, f))`` at the node nearest to ``x``."""
    tab = _tables(f.grid.n, cfg.R0)
    nb = len(tab.bp)
    s, T = _exact(f.values * f.grid.h**2, np.array([_node_index(f.grid, x)]), tab, f.grid.h,
                  np.array([0]), np.array([nb - 1]))
    return float(s[0]), float(T[0])


def sigma_at(x: Point, f: Field, cfg: ConcConfig) -> float:
    """Local concentration scale; floored at ``h/2`` for sub-grid spikes."""
    return sigma_and_T(x, f, cfg)[0]


def mass_T(x: Point, f: Field, cfg: ConcConfig) -> float:
    """``T(x, f) = ∫_{B_x(σ(x,f))} f``."""
    return sigma_and_T(x, f, cfg)[1]


# ---------------------------------------------------------------- full map


@dataclass
class ConcentrationMap:
    """Everything the center-of-mass construction needs for one density.

    ``sigma``/``T`` hold exact values on refined nodes and NaN elsewhere;
    ``sigma_lo < σ(x, f) <= sigma_hi`` holds at every node.
    """

    grid: SurfaceGrid
    cfg: ConcConfig
    sigma: np.ndarray
    T: np.ndarray
    sigma_lo: np.ndarray
    sigma_hi: np.ndarray
    scale: float
    refined: np.ndarray
    s_mask: Optional[np.ndarray] = None
    eta: Optional[np.ndarray] = None
    beta: Optional[Point] = None
    info: dict = field(default_factory=dict)

    @property
    def at_apex(self) -> bool:
        return self.scale >= self.cfg.delta

    @property
    def max_T(self) -> float:
        return float(np.nanmax(self.T))

    @property
    def argmax_T(self) -> int:
        return int(np.nanargmax(self.T))

    def cone_point(self) -> ConePoint:
        return ConePoint(None if self.at_apex else self.beta, self.scale, self.cfg.delta)


def _ladder_brackets(f: Field, tab: _Tables, R0: float, rungs_per_R0: int = 16):
    """Lower/upper bounds on ``σ(x, f)`` at every node from a geometric radius ladder."""
    g = f.grid
    w = f.values * g.h**2
    total = float(w.sum())
    w_hat = np.fft.rfft2(w)
    q = R0 ** (1.0 / rungs_per_R0)
    radii = [g.h / 2]
    while radii[-1] < DIAMETER:
        radii.append(radii[-1] * q)
    masses: dict[int, np.ndarray] = {}

    def M(k: int) -> np.ndarray:
        if radii_ext(k) > DIAMETER:
            return np.full(g.shape, total)
        if k not in masses:
            masses[k] = _ball_mass_all(w_hat, tab.dist_grid, radii_ext(k))
        return masses[k]

    def radii_ext(k: int) -> float:
        return radii[0] * q**k

    first = np.full(g.shape, -1)
    for k in range(len(radii)):
        gk = M(k) + M(k + rungs_per_R0) - total
        newly = (first < 0) & (gk >= 0)
        first[newly] = k
        masses.pop(k, None)
        if np.all(first >= 0):
            break
    first[first < 0] = len(radii) - 1
    # one rung of slack on each side absorbs FFT rounding
    lo = np.where(first >= 2, radii[0] * q ** (first - 2.0), 0.0)
    hi = np.minimum(radii[0] * q ** (first + 1.0), DIAMETER)
    hi = np.where(first == 0, radii[0] * q, hi)
    return lo, hi


def concentration_map(f: Field, cfg: ConcConfig, refine_all: Optional[bool] = None) -> ConcentrationMap:
    """Local scales, ``σ(f)``, ``S(f)``, ``η(f)`` and ``β(f)`` for a density.

    ``refine_all`` computes ``σ(x, f)`` exactly at every node (default for
    ``n <= 64``); otherwise only nodes that can affect the result are refined.
    Pruning needs variation in ``f``: near-uniform densities end up refining
    every node at quadratic cost (about 100 s at ``n = 256``).
    ``S``/``η``/``β`` are filled when ``σ(f) < delta``; an empty ``S`` raises
    ``CalibrationError`` and a degenerate projection raises ``ProjectionUndefined``.
    """
    as_density(f, tol=1e-8)
    g = f.grid
    N = g.n * g.n
    tab = _tables(g.n, cfg.R0)
    nb = len(tab.bp)
    w = f.values * g.h**2
    if refine_all is None:
        refine_all = g.n <= EXACT_ALL_MAX_N

    sigma = np.full(N, np.nan)
    T = np.full(N, np.nan)
    if refine_all:
        nodes = np.arange(N)
        s, t = _exact(w, nodes, tab, g.h, np.zeros(N, dtype=int), np.full(N, nb - 1))
        sigma[:] = s
        T[:] = t
        lo_b = s * (1 - 1e-12)
        hi_b = s.copy()
    else:
        lo2, hi2 = _ladder_brackets(f, tab, cfg.R0)
        lo_b, hi_b = lo2.ravel(), hi2.ravel()

        def refine(nodes):
            todo = nodes[np.isnan(sigma[nodes])]
            if len(todo):
                a = np.searchsorted(tab.bp, lo_b[todo], side="left")
                z = np.minimum(np.searchsorted(tab.bp, hi_b[todo], side="right"), nb - 1)
                s, t = _exact(w, todo, tab, g.h, a, z)
                sigma[todo] = s
                T[todo] = t

        # branch and bound for the minimum local scale
        order = np.argsort(lo_b, kind="stable")
        best = math.inf
        pos = 0
        while pos < N and lo_b[order[pos]] < best:
            chunk = order[pos:pos + 256]
            chunk = chunk[lo_b[chunk] < best]
            refine(chunk)
            best = min(best, float(np.nanmin(sigma[chunk])))
            pos += 256
        scale = 3.0 * best
        if scale < cfg.delta:
            # S(f) and the center of mass are only needed below the apex
            refine(np.flatnonzero(lo_b < scale))

    refined = ~np.isnan(sigma)
    scale = 3.0 * float(np.nanmin(sigma))
    cm = ConcentrationMap(g, cfg, sigma.reshape(g.shape), T.reshape(g.shape),
                          lo_b.reshape(g.shape), hi_b.reshape(g.shape), scale, refined.reshape(g.shape))
    cm.info["refined_nodes"] = int(refined.sum())
    if not cm.at_apex:
        _center_of_mass(cm)
    return cm


def embed(points_x: np.ndarray, points_y: np.ndarray) -> np.ndarray:
    """Flat embedding of the torus into R^4 as a product of circles of radius 1/2π."""
    ax = TWO_PI * np.asarray(points_x)
    ay = TWO_PI * np.asarray(points_y)
    return np.stack([np.cos(ax), np.sin(ax), np.cos(ay), np.sin(ay)], axis=-1) / TWO_PI


def project(eta: np.ndarray, tol: float = 1e-9) -> Point:
    """Nearest point of the embedded torus: one angle per circle factor."""
    rx = math.hypot(eta[0], eta[1])
    ry = math.hypot(eta[2], eta[3])
    if rx * TWO_PI < tol or ry * TWO_PI < tol:
        raise ProjectionUndefined(f"center of mass {eta!r} lies on a circle axis")
    return Point(math.atan2(eta[1], eta[0]) / TWO_PI, math.atan2(eta[3], eta[2]) / TWO_PI)


def _center_of_mass(cm: ConcentrationMap) -> None:
    tau = cm.cfg.tau
    sig = cm.sigma
    with np.errstate(invalid="ignore"):
        s_mask = (cm.T > tau) & (sig < cm.scale)
    cm.s_mask = s_mask
    if not s_mask.any():
        raise CalibrationError(f"S(f) is empty for tau={tau} (max T = {cm.max_T:.4g})")
    wts = (cm.T[s_mask] - tau) * (cm.scale - sig[s_mask])
    if not wts.sum() > 0:
        raise CalibrationError("all center-of-mass weights vanish")
    ii, jj = np.nonzero(s_mask)
    e = embed(ii * cm.grid.h, jj * cm.grid.h)
    cm.eta = (wts[:, None] * e).sum(axis=0) / wts.sum()
    cm.beta = project(cm.eta)


def scale_sigma(f: Field, cfg: ConcConfig) -> float:
    """``σ(f) = 3 min_x σ(x, f)`` over grid nodes."""
    return concentration_map(f, cfg).scale


def s_set(f: Field, cfg: ConcConfig) -> np.ndarray:
    """Boolean node mask of ``S(f)``; raises ``CalibrationError`` when empty."""
    cm = concentration_map(f, cfg, refine_all=True) if f.grid.n <= 128 else concentration_map(f, cfg)
    if cm.s_mask is None and not cm.refined.all():
        cm = concentration_map(f, cfg, refine_all=True)
    if cm.s_mask is None:
        # at the apex S(f) is still defined; evaluate it explicitly
        _center_of_mass_mask_only(cm)
    return cm.s_mask


def _center_of_mass_mask_only(cm: ConcentrationMap) -> None:
    with np.errstate(invalid="ignore"):
        cm.s_mask = (cm.T > cm.cfg.tau) & (cm.sigma < cm.scale)
    if not cm.s_mask.any():
        raise CalibrationError(f"S(f) is empty for tau={cm.cfg.tau} (max T = {cm.max_T:.4g})")


def eta(f: Field, cfg: ConcConfig) -> np.ndarray:
    cm = concentration_map(f, cfg)
    if cm.eta is None:
        if not cm.refined.all():
            cm = concentration_map(f, cfg, refine_all=True)
        _center_of_mass_mask_only(cm)
        _center_of_mass(cm)
    return cm.eta


def beta(f: Field, cfg: ConcConfig) -> Point:
    cm = concentration_map(f, cfg)
    if cm.at_apex:
        raise ValueError(f"beta is undefined: sigma(f) = {cm.scale:.4g} >= delta = {cfg.delta}")
    return cm.beta


def psi(f: Field, cfg: ConcConfig) -> ConePoint:
    """``(β(f), σ(f))`` below the apex, the apex otherwise."""
    return concentration_map(f, cfg).cone_point()


# ---------------------------------------------------------------- diagnostics


def calibrate_tau(densities, cfg: ConcConfig) -> float:
    """Half the smallest ``max_x T(x, f)`` over a calibration corpus."""
    worst = min(concentration_map(f, cfg, refine_all=True).max_T for f in densities)
    return 0.5 * worst


def density_corpus(grid: SurfaceGrid, seed: int, draws: int = 2, amplitudes=(1.0, 2.0, 3.0)):
    """Seeded ``(name, density)`` pairs spanning diffuse and concentrated cases.

    The uniform density, bubbles of several widths at a seeded center, and
    ``e^{±A u}`` for smooth random ``u``.
    """
    rng = np.random.default_rng(seed)
    out = [("uniform", grid.constant(1.0))]
    for w in (0.02, 0.05, 0.1):
        c = Point(*rng.uniform(0, 1, 2))
        out.append((f"bubble-w{w:g}", bubble_density(grid, c, w)))
    for i in range(draws):
        u = smooth_field(grid, rng)
        for a in amplitudes:
            out.append((f"field{i}-a{a:g}+", density_from_exponent(a * u)))
            out.append((f"field{i}-a{a:g}-", density_from_exponent(-a * u)))
    return out


CALIBRATION_SEED = 20240601
CALIBRATION_N = 64


def calibrated_tau(cfg: ConcConfig = ConcConfig()) -> float:
    """``τ`` from the fixed calibration corpus (seeded, 64² grid)."""
    return _calibrated_tau(cfg.R, cfg.delta)


@lru_cache(maxsize=4)
def _calibrated_tau(R: float, delta: float) -> float:
    cfg = ConcConfig(R=R, delta=delta)
    corpus = density_corpus(build_grid(CALIBRATION_N), CALIBRATION_SEED)
    return calibrate_tau([f for _, f in corpus], cfg)


@dataclass(frozen=True)
class ConcPropertyReport:
    sigma: float
    at_apex: bool
    p: Optional[Point]
    mass_in: float
    mass_out: float
    b_holds: bool
    dist_p_beta: Optional[float]
    c_prime: float
    a_holds: bool


def check_conc_properties(cm: ConcentrationMap, f: Field) -> ConcPropertyReport:
    """Search nodes ``p`` for the two-sided mass property and the distance bound to β."""
    cfg = cm.cfg
    g = cm.grid
    sigma = cm.scale
    m_in = ball_masses(f, sigma)
    m_out = 1.0 - _ball_mass_all(np.fft.rfft2(f.values * g.h**2), _tables(g.n, 1.0).dist_grid,
                                 cfg.R * sigma, closed=True)
    ok = (m_in > cfg.tau) & (m_out > cfg.tau)
    c_prime = max(3 * cfg.R + 1, DIAMETER / cfg.delta)
    if not ok.any():
        # the distance bound is only stated below the apex
        return ConcPropertyReport(sigma, cm.at_apex, None, float(m_in.max()), float(m_out.max()),
                                  False, None, c_prime, cm.at_apex)
    ii, jj = np.nonzero(ok)
    if cm.at_apex:
        k = int(np.argmax(np.minimum(m_in[ii, jj], m_out[ii, jj])))
        p = g.node_point(ii[k], jj[k])
        return ConcPropertyReport(sigma, True, p, float(m_in[ii[k], jj[k]]), float(m_out[ii[k], jj[k]]),
                                  True, None, c_prime, True)
    pts = [g.node_point(i, j) for i, j in zip(ii, jj)]
    dists = np.array([geodesic_distance(q, cm.beta) for q in pts])
    k = int(np.argmin(dists))
    return ConcPropertyReport(sigma, False, pts[k], float(m_in[ii[k], jj[k]]), float(m_out[ii[k], jj[k]]),
                              True, float(dists[k]), c_prime, bool(dists[k] <= c_prime * sigma))
