"""Local exponential-integral inequalities on a flat planar patch.

Patch functions are vectorized callables ``u(X, Y)`` on the plane.  Integrals
over disks and annuli centred at ``p`` use polar quadrature: Gauss-Legendre in
``log ρ`` on annuli (in ``ρ`` on disks) times the uniform rule in ``θ``, which is
spectrally accurate for smooth periodic integrands.  Gradients come from
central finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

PatchFn = Callable[[np.ndarray, np.ndarray], np.ndarray]

DEFAULT_RES = 512
EPS = 1.0
LEMMA_CONST = 16.0 * math.pi


def _center(p) -> tuple[float, float]:
    if hasattr(p, "x"):
        return float(p.x), float(p.y)
    px, py = p
    return float(px), float(py)


@dataclass(frozen=True)
class PlanarPatch:
    """Polar quadrature on ``B_p(2r)`` in flat coordinates."""

    center: tuple[float, float]
    r: float
    n_rad: int = DEFAULT_RES
    n_theta: int = DEFAULT_RES

    def __post_init__(self) -> None:
        if not 0 < self.r < 0.45:
            raise ValueError("patch radius r must lie in (0, 0.45)")
        object.__setattr__(self, "center", _center(self.center))

    def integrate(self, fn: PatchFn, r_in: float = 0.0, r_out: Optional[float] = None) -> float:
        r_out = 2 * self.r if r_out is None else r_out
        return integrate_polar(fn, self.center, r_in, r_out, self.n_rad, self.n_theta)

    @property
    def area(self) -> float:
        return self.integrate(lambda X, Y: np.ones_like(X))


def polar_nodes(p, r_in: float, r_out: float, n_rad: int = DEFAULT_RES, n_theta: int = DEFAULT_RES):
    """Nodes ``(X, Y)`` and weights for ``∫_{A_p(r_in, r_out)} f dA``."""
    px, py = _center(p)
    if not 0 <= r_in < r_out:
        raise ValueError("need 0 <= r_in < r_out")
    z, wz = np.polynomial.legendre.leggauss(n_rad)
    if r_in > 0:
        a, b = math.log(r_in), math.log(r_out)
        rho = np.exp(0.5 * (b - a) * z + 0.5 * (b + a))
        wr = 0.5 * (b - a) * wz * rho * rho  # dρ ρ = ρ² d(log ρ)
    else:
        rho = 0.5 * r_out * (z + 1)
        wr = 0.5 * r_out * wz * rho
    theta = np.arange(n_theta) * (2 * math.pi / n_theta)
    R, TH = np.meshgrid(rho, theta, indexing="ij")
    X = px + R * np.cos(TH)
    Y = py + R * np.sin(TH)
    W = np.broadcast_to(wr[:, None] * (2 * math.pi / n_theta), X.shape)
    return X, Y, W


def integrate_polar(fn: PatchFn, p, r_in: float, r_out: float,
                    n_rad: int = DEFAULT_RES, n_theta: int = DEFAULT_RES) -> float:
    X, Y, W = polar_nodes(p, r_in, r_out, n_rad, n_theta)
    return float(np.sum(W * fn(X, Y)))


def log_integral_exp_polar(fn: PatchFn, p, r_in: float, r_out: float, sign: float = 1.0,
                           n_rad: int = DEFAULT_RES, n_theta: int = DEFAULT_RES) -> float:
    """``log ∫_{A_p(r_in, r_out)} e^{±u}`` with the maximum factored out."""
    X, Y, W = polar_nodes(p, r_in, r_out, n_rad, n_theta)
    v = sign * fn(X, Y)
    m = float(v.max())
    return m + math.log(float(np.sum(W * np.exp(v - m))))


def fd_gradient(fn: PatchFn, X: np.ndarray, Y: np.ndarray, step: float = 1e-6):
    gx = (fn(X + step, Y) - fn(X - step, Y)) / (2 * step)
    gy = (fn(X, Y + step) - fn(X, Y - step)) / (2 * step)
    return gx, gy


def dirichlet_polar(fn: PatchFn, p, r_in: float, r_out: float, step: Optional[float] = None,
                    n_rad: int = DEFAULT_RES, n_theta: int = DEFAULT_RES) -> float:
    """``∫_{A_p(r_in, r_out)} |∇u|²`` with finite-difference gradients."""
    if step is None:
        step = 1e-5 * max(r_in, r_out / 64)
    X, Y, W = polar_nodes(p, r_in, r_out, n_rad, n_theta)
    gx, gy = fd_gradient(fn, X, Y, step)
    return float(np.sum(W * (gx * gx + gy * gy)))


# ---------------------------------------------------------------- Kelvin


def _check_sr(s: float, r: float) -> None:
    if not (s > 0 and r > 0):
        raise ValueError("s and r must be positive")
    if s >= r:
        raise ValueError(f"Kelvin transform needs s < r (got s={s}, r={r})")


def kelvin_map(X, Y, p, s: float, r: float):
    """Inversion ``K(x) = p + r s (x - p)/|x - p|²``; swaps ``|x-p| = s`` and ``= r``."""
    _check_sr(s, r)
    px, py = _center(p)
    dx = np.asarray(X, dtype=float) - px
    dy = np.asarray(Y, dtype=float) - py
    q = r * s / (dx * dx + dy * dy)
    return px + q * dx, py + q * dy


def kelvin_transform(u: PatchFn, p, s: float, r: float, inner_value: Optional[float] = None) -> PatchFn:
    """``ũ = u∘K`` on ``|x - p| >= s/2``.

    Inside ``B_p(s/2)`` the pulled-back function would need ``u`` beyond
    ``B_p(2r)``; ``inner_value`` (the boundary constant) fills that disk when given.
    """
    _check_sr(s, r)
    px, py = _center(p)

    def ut(X, Y):
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        KX, KY = kelvin_map(X, Y, (px, py), s, r)
        out = np.asarray(u(KX, KY), dtype=float)
        if inner_value is not None:
            inside = (X - px) ** 2 + (Y - py) ** 2 < (s / 2) ** 2
            out = np.where(inside, inner_value, out)
        return out

    return ut


@dataclass(frozen=True)
class KelvinReport:
    lhs: float
    rhs: float
    rel_error: float
    grad_rel_error: float
    involution_error: float


def kelvin_integral_identity_check(u: PatchFn, p, s: float, r: float,
                                   n_rad: int = DEFAULT_RES, n_theta: int = DEFAULT_RES,
                                   n_samples: int = 1000, seed: int = 0) -> KelvinReport:
    """Compare both sides of the change of variables under ``K``.

    ``∫_{A(s,r)} e^{u∘K}`` against ``∫_{A(s,r)} e^u s²r²/|x-p|⁴`` by separate
    quadratures, plus the conformal gradient identity at random sample points
    and the involution ``K∘K = id``.
    """
    _check_sr(s, r)
    px, py = _center(p)
    ut = kelvin_transform(u, p, s, r)
    lhs = integrate_polar(lambda X, Y: np.exp(ut(X, Y)), p, s, r, n_rad, n_theta)

    def weighted(X, Y):
        d2 = (X - px) ** 2 + (Y - py) ** 2
        return np.exp(u(X, Y)) * (s * r) ** 2 / d2**2

    rhs = integrate_polar(weighted, p, s, r, n_rad, n_theta)

    rng = np.random.default_rng(seed)
    rho = np.exp(rng.uniform(math.log(s / 2), math.log(2 * r), n_samples))
    th = rng.uniform(0, 2 * math.pi, n_samples)
    X = px + rho * np.cos(th)
    Y = py + rho * np.sin(th)
    KX, KY = kelvin_map(X, Y, p, s, r)
    KKX, KKY = kelvin_map(KX, KY, p, s, r)
    inv_err = float(np.max(np.hypot(KKX - X, KKY - Y)))

    step = 1e-6 * s
    gx, gy = fd_gradient(ut, X, Y, step)
    lhs_g = gx * gx + gy * gy
    ux, uy = fd_gradient(u, KX, KY, step)
    rhs_g = (ux * ux + uy * uy) * (s * r) ** 2 / rho**4
    scale = np.maximum(np.abs(rhs_g), 1e-12 * max(1.0, float(np.max(np.abs(rhs_g)))))
    grad_err = float(np.max(np.abs(lhs_g - rhs_g) / np.maximum(scale, 1e-300)))
    return KelvinReport(lhs, rhs, abs(lhs - rhs) / abs(rhs), grad_err, inv_err)


# ---------------------------------------------------------------- probes


@dataclass(frozen=True)
class ProbeRow:
    s: float
    r: float
    lhs: float
    rhs: float
    slack: float
    flags: tuple[str, ...] = ()


def ball_lemma_probe(u: PatchFn, p, s: float, eps: float = EPS,
                     n_rad: int = DEFAULT_RES, n_theta: int = DEFAULT_RES) -> ProbeRow:
    """``∫_{B(s)}|∇u|²/(16π - eps) + 4 log s`` minus ``log∫_{B(s/2)}e^u + log∫_{B(s/2)}e^{-u}``.

    The ball inequality bounds the slack below by ``-C``; for ``u ≡ 0`` it equals ``-2 log(π/4)``.
    """
    if not 0 < s <= 0.2:
        raise ValueError("ball probe needs 0 < s <= 0.2")
    lhs = (log_integral_exp_polar(u, p, 0.0, s / 2, 1.0, n_rad, n_theta)
           + log_integral_exp_polar(u, p, 0.0, s / 2, -1.0, n_rad, n_theta))
    d = dirichlet_polar(u, p, 0.0, s, n_rad=n_rad, n_theta=n_theta)
    rhs = d / (LEMMA_CONST - eps) + 4 * math.log(s)
    return ProbeRow(s, math.nan, lhs, rhs, rhs - lhs)


def _trace_modes(u: PatchFn, p, rho: float, n_theta: int) -> np.ndarray:
    px, py = _center(p)
    th = np.arange(n_theta) * (2 * math.pi / n_theta)
    tr = np.asarray(u(px + rho * np.cos(th), py + rho * np.sin(th)), dtype=float)
    return np.fft.rfft(tr) / n_theta


def boundary_oscillation(u: PatchFn, p, rho: float, n_theta: int = DEFAULT_RES) -> float:
    px, py = _center(p)
    th = np.arange(n_theta) * (2 * math.pi / n_theta)
    tr = np.asarray(u(px + rho * np.cos(th), py + rho * np.sin(th)), dtype=float)
    return float(tr.max() - tr.min())


@dataclass(frozen=True)
class HarmonicBlend:
    """``u`` inside ``B_p(r)``, harmonic on ``A_p(r, 2r)``, constant beyond.

    The outer constant is the mean of the inner trace, so the blend is the
    Fourier-mode solution ``a_k ((ρ/2r)^k - (2r/ρ)^k)/(2^-k - 2^k)``.
    """

    u: PatchFn
    center: tuple[float, float]
    r: float
    modes: np.ndarray

    @classmethod
    def build(cls, u: PatchFn, p, r: float, n_theta: int = DEFAULT_RES) -> "HarmonicBlend":
        return cls(u, _center(p), r, _trace_modes(u, p, r, n_theta))

    @property
    def outer_value(self) -> float:
        return float(self.modes[0].real)

    def _radial(self, rho: np.ndarray, k: np.ndarray) -> np.ndarray:
        x = rho[..., None] / (2 * self.r)
        return (x**k - x ** (-k)) / (0.5**k - 2.0**k)

    def __call__(self, X, Y):
        px, py = self.center
        X, Y = np.broadcast_arrays(np.asarray(X, dtype=float), np.asarray(Y, dtype=float))
        rho = np.hypot(X - px, Y - py)
        out = np.full(X.shape, self.outer_value)
        inner = rho <= self.r
        if np.any(inner):
            out[inner] = np.asarray(self.u(X[inner], Y[inner]), dtype=float)
        ring = (rho > self.r) & (rho < 2 * self.r)
        if np.any(ring) and len(self.modes) > 1:
            th = np.arctan2(Y[ring] - py, X[ring] - px)
            k = np.arange(1, len(self.modes))
            mult = np.where(k == len(self.modes) - 1, 1.0, 2.0)
            # real trigonometric series of the trace, each mode damped radially
            phase = np.exp(1j * th[:, None] * k[None, :])
            series = self._radial(rho[ring], k) * phase * (mult * self.modes[1:])[None, :]
            out[ring] = self.outer_value + np.real(series.sum(axis=1))
        return out

    def ring_energy(self, n_rad: int = 256) -> float:
        """Dirichlet energy of the harmonic part on ``A_p(r, 2r)``."""
        z, wz = np.polynomial.legendre.leggauss(n_rad)
        rho = self.r * (1.5 + 0.5 * z)
        w = 0.5 * self.r * wz
        k = np.arange(1, len(self.modes)).astype(float)
        mult = np.where(k == len(self.modes) - 1, 1.0, 2.0)
        amp2 = (mult * np.abs(self.modes[1:])) ** 2  # squared cos/sin amplitude
        x = rho[:, None] / (2 * self.r)
        den = 0.5**k - 2.0**k
        f = (x**k - x ** (-k)) / den
        fp = (k / rho[:, None]) * (x**k + x ** (-k)) / den
        dens = (fp**2 + (k / rho[:, None]) ** 2 * f**2) * rho[:, None]
        return float(math.pi * np.sum(w[:, None] * dens * amp2[None, :]))


def annulus_lemma_probe(u: PatchFn, p, s: float, r: float, eps: float = EPS, blend: bool = True,
                        boundary_tol: float = 1e-8,
                        n_rad: int = DEFAULT_RES, n_theta: int = DEFAULT_RES) -> ProbeRow:
    """Slack of the thick-annulus inequality with the ``-4 log s`` term.

    The inequality assumes ``u`` constant on ``∂B_p(2r)``.  With ``blend=True``
    ``u`` is replaced outside ``B_p(r)`` by its harmonic extension to a constant;
    with ``blend=False`` a non-constant boundary is flagged and the slack is
    computed for ``u`` as given.
    """
    _check_sr(s, r)
    flags = []
    if blend:
        hb = HarmonicBlend.build(u, p, r, n_theta)
        d = dirichlet_polar(u, p, s / 2, r, n_rad=n_rad, n_theta=n_theta) + hb.ring_energy()
        target = hb
    else:
        osc = boundary_oscillation(u, p, 2 * r, n_theta)
        if osc > boundary_tol:
            flags.append(f"non-constant boundary: oscillation {osc:.3g} on |x-p|=2r")
        d = dirichlet_polar(u, p, s / 2, 2 * r, n_rad=n_rad, n_theta=n_theta)
        target = u
    lhs = (log_integral_exp_polar(target, p, s, r, 1.0, n_rad, n_theta)
           + log_integral_exp_polar(target, p, s, r, -1.0, n_rad, n_theta))
    rhs = d / (LEMMA_CONST - eps) - 4 * math.log(s)
    return ProbeRow(s, r, lhs, rhs, rhs - lhs, tuple(flags))


def combined_slack(u: PatchFn, p, s: float, r: float, eps: float = EPS,
                   n_rad: int = DEFAULT_RES, n_theta: int = DEFAULT_RES) -> float:
    """Ball plus annulus slack; the ``±4 log s`` terms cancel."""
    b = ball_lemma_probe(u, p, s, eps, n_rad, n_theta)
    a = annulus_lemma_probe(u, p, s, r, eps, True, n_rad=n_rad, n_theta=n_theta)
    return b.slack + a.slack


def scaled_profile(v: PatchFn, p, s: float) -> PatchFn:
    """``x ↦ v((x - p)/s)``: a fixed profile dilated to width ``s``."""
    px, py = _center(p)
    return lambda X, Y: v((np.asarray(X) - px) / s, (np.asarray(Y) - py) / s)


def gaussian_profile(amplitude: float = 3.0) -> PatchFn:
    """``A exp(-|y|²)``, a fixed profile for dilation scans."""
    return lambda X, Y: amplitude * np.exp(-(np.asarray(X) ** 2 + np.asarray(Y) ** 2))
