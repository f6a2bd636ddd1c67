"""Quantization algebra for blow-up masses and local-mass diagnostics.

Masses are handled in units of π: a pair ``(a, b)`` stands for
``(m1, m2) = (aπ, bπ)``, and the quantization relation
``(m1 - m2)² = 8π(m1 + m2)`` becomes ``(a - b)² = 8(a + b)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .energy import ProblemParams
from .surface import Field, Point, ball_mask


@dataclass(frozen=True)
class MassPair:
    """Blow-up masses in units of π."""

    m1: float
    m2: float

    def __post_init__(self) -> None:
        if self.m1 < 0 or self.m2 < 0:
            raise ValueError("masses must be non-negative")


def quantization_residual(m1, m2):
    """``(m1 - m2)² - 8π(m1 + m2)`` in absolute units."""
    m1 = np.asarray(m1, dtype=float)
    m2 = np.asarray(m2, dtype=float)
    return (m1 - m2) ** 2 - 8 * math.pi * (m1 + m2)


def quantization_roots(m2: float) -> tuple[float, float]:
    """Both solutions ``m1 = m2 + 4π ± 4√(π m2 + π²)`` (absolute units), plus root first."""
    if m2 < 0:
        raise ValueError("m2 must be non-negative")
    root = 4.0 * math.sqrt(math.pi * m2 + math.pi**2)
    return m2 + 4 * math.pi + root, m2 + 4 * math.pi - root


def _F(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a - b) ** 2 - 8 * (a + b)


def _band(a: np.ndarray, b: np.ndarray, step: float) -> np.ndarray:
    # gradient bound times half-width plus the exact quadratic remainder
    # |2d - 8| + |2d + 8| == max(4|d|, 16)
    return np.maximum(4 * np.abs(a - b), 16.0) * (step / 2) + step**2


@dataclass(frozen=True)
class SearchResult:
    step: float  # units of π
    lo: float
    hi: float
    pairs: list
    cells: int
    near_misses: list  # (m1, m2, residual) in units of π


def admissible_pair_search(step: float, lo: float = 4.0, hi: float = 16.0,
                           stripe: int = 512, keep_near: int = 0) -> SearchResult:
    """Exhaustive cell search of ``[lo, hi)²`` (units of π) for quantized pairs.

    Each cell of side ``step`` is tested at its center against the band
    ``|∂₁F| + |∂₂F|`` times ``step/2`` plus ``step²``; any exact root inside a
    cell passes this test, so an empty result certifies there is none.
    ``keep_near`` retains that many smallest-residual cells for reporting.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    if step > 1e-3 * (1 + 1e-9):
        raise ValueError("step must be at most 1e-3 (units of π)")
    m = int(math.ceil((hi - lo) / step - 1e-9))
    centers = lo + (np.arange(m) + 0.5) * step
    centers = centers[centers < hi]
    pairs = []
    near: list[tuple[float, float, float]] = []
    for s0 in range(0, len(centers), stripe):
        b = centers[s0:s0 + stripe, None]
        a = centers[None, :]
        F = _F(a, b)
        hit = np.abs(F) <= _band(a, b, step)
        if hit.any():
            ib, ia = np.nonzero(hit)
            pairs.extend(MassPair(float(centers[j]), float(centers[s0 + i])) for i, j in zip(ib, ia))
        if keep_near:
            absF = np.abs(F).ravel()
            k = min(keep_near, absF.size)
            idx = np.argpartition(absF, k - 1)[:k]
            for q in idx:
                i, j = divmod(int(q), len(centers))
                near.append((float(centers[j]), float(centers[s0 + i]), float(F.ravel()[q])))
            near = sorted(near, key=lambda t: abs(t[2]))[:keep_near]
    return SearchResult(step, lo, hi, pairs, len(centers) ** 2, near)


@dataclass(frozen=True)
class BranchScan:
    plus_min: float  # smallest plus-root over m2 >= 4π (units of π)
    minus_max: float  # largest minus-root over m2 < 16π
    max_residual: float


def branch_scan(points: int = 10_000) -> BranchScan:
    """Both root branches on a dense ``m2`` grid: plus ≥ 16π on [4π, 16π), minus < 4π there."""
    m2 = np.linspace(4.0, 16.0, points, endpoint=False) * math.pi
    root = 4.0 * np.sqrt(math.pi * m2 + math.pi**2)
    plus = m2 + 4 * math.pi + root
    minus = m2 + 4 * math.pi - root
    res = np.concatenate([quantization_residual(plus, m2), quantization_residual(minus, m2)])
    scale = np.concatenate([plus, minus]) ** 2 + 1.0
    return BranchScan(float(plus.min() / math.pi), float(minus.max() / math.pi),
                      float(np.max(np.abs(res) / scale)))


def local_mass(u: Field, p: ProblemParams, x0: Point, r: float, sign: int = 1) -> float:
    """``ρ_i ∫_{B_{x0}(r)} h_i e^{±u} / ∫ h_i e^{±u}``; ``i = 1`` for ``sign=+1``."""
    if not 0 < r < 0.45:
        raise ValueError("radius must lie in (0, 0.45)")
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    rho, h = (p.rho1, p.h1) if sign > 0 else (p.rho2, p.h2)
    v = sign * u.values
    e = h.values * np.exp(v - v.max())
    mask = ball_mask(u.grid, x0, r).values
    return float(rho * (e * mask).sum() / e.sum())
