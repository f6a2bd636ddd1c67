import math

import numpy as np
import pytest

from meanfield.blowup import (
    MassPair,
    admissible_pair_search,
    branch_scan,
    local_mass,
    quantization_residual,
    quantization_roots,
)
from meanfield.energy import ProblemParams, uniform_params
from meanfield.surface import Point, ball_mask, build_grid, integrate
from meanfield.testfn import TestParams, phi

PI = math.pi


def test_roots_at_4pi():
    plus, minus = quantization_roots(4 * PI)
    assert plus == pytest.approx(8 * PI + 4 * PI * math.sqrt(5), rel=1e-14)
    assert minus == pytest.approx(8 * PI - 4 * PI * math.sqrt(5), rel=1e-14)
    assert plus / PI == pytest.approx(16.944, abs=1e-3)
    assert minus / PI == pytest.approx(-0.944, abs=1e-3)


def test_roots_at_zero():
    assert quantization_roots(0.0) == pytest.approx((8 * PI, 0.0), abs=1e-12)


def test_roots_reject_negative():
    with pytest.raises(ValueError):
        quantization_roots(-1.0)


def test_root_residual_scan():
    for m2 in np.linspace(0, 40 * PI, 10_000):
        for r in quantization_roots(float(m2)):
            assert abs(quantization_residual(r, m2)) <= 1e-10 * max(1.0, r * r)


def test_mass_pair_validation():
    with pytest.raises(ValueError):
        MassPair(-1.0, 2.0)
    assert MassPair(4.0, 5.0).m2 == 5.0


def test_branch_scan():
    bs = branch_scan()
    assert bs.plus_min >= 16.0
    assert bs.minus_max < 4.0
    assert bs.plus_min == pytest.approx(8 + 4 * math.sqrt(5), abs=1e-9)
    assert bs.max_residual <= 1e-10


def test_search_rejects_coarse_step():
    with pytest.raises(ValueError):
        admissible_pair_search(2e-3)
    with pytest.raises(ValueError):
        admissible_pair_search(0.0)


def test_search_subdomain_empty():
    res = admissible_pair_search(1e-3, lo=4.0, hi=6.0, keep_near=5)
    assert res.pairs == []
    assert res.cells == 2000**2
    assert len(res.near_misses) == 5
    resid = [abs(r) for _, _, r in res.near_misses]
    assert resid == sorted(resid)


def test_search_finds_origin_root():
    # (0, 0) solves the quantization relation; its cell must be flagged
    res = admissible_pair_search(1e-3, lo=0.0, hi=0.5)
    assert MassPair(0.0005, 0.0005) in res.pairs


@pytest.mark.parametrize("m2", [0.123456, 0.45])
def test_search_covers_exact_roots(m2):
    # plus root near 8: search a window holding both coordinates
    m1 = quantization_roots(m2 * PI)[0] / PI
    lo = math.floor(min(m1, m2))
    hi = math.ceil(max(m1, m2)) + 1e-9
    assert hi - lo <= 10 + 1e-6
    res = admissible_pair_search(1e-3, lo=lo, hi=hi)
    cell = lambda v: lo + (math.floor((v - lo) / 1e-3) + 0.5) * 1e-3  # noqa: E731
    flagged = {(round(p.m1, 9), round(p.m2, 9)) for p in res.pairs}
    assert (round(cell(m1), 9), round(cell(m2), 9)) in flagged


def test_local_mass_uniform():
    g = build_grid(128)
    p = uniform_params(g, 6 * PI, 10 * PI)
    u = g.constant(0.0)
    x0 = Point(0.3, 0.4)
    for r, rho, sign in ((0.1, 6 * PI, 1), (0.2, 10 * PI, -1)):
        m = local_mass(u, p, x0, r, sign)
        assert m == pytest.approx(rho * integrate(ball_mask(g, x0, r)), rel=1e-12)
        assert m == pytest.approx(rho * PI * r * r, rel=0.05)


def test_local_mass_monotone_in_r():
    g = build_grid(128)
    th = TestParams(Point(0.25, 0.25), 0.03, Point(0.75, 0.75), 0.1)
    u = phi(th, g)
    p = uniform_params(g, 12 * PI, 12 * PI)
    ms = [local_mass(u, p, th.x1, r, 1) for r in np.linspace(0.01, 0.44, 30)]
    assert np.all(np.diff(ms) >= 0)
    assert ms[-1] <= 12 * PI


def test_local_mass_concentrated_bubble():
    g = build_grid(256)
    t1 = 0.01
    th = TestParams(Point(0.25, 0.25), t1, Point(0.75, 0.75), 0.1)
    u = phi(th, g)
    p = uniform_params(g, 12 * PI, 12 * PI)
    m = local_mass(u, p, th.x1, 10 * t1, 1)
    e = np.exp(u.values - u.max())
    frac = float((e * ball_mask(g, th.x1, 10 * t1).values).sum() / e.sum())
    assert m == pytest.approx(12 * PI * frac, rel=1e-12)
    # the bubble carries almost all of e^φ within ten widths
    assert frac > 0.95


def test_local_mass_weighted():
    g = build_grid(64)
    h1 = g.sample(lambda X, Y: 1 + 0.5 * np.cos(2 * PI * X))
    p = ProblemParams(6 * PI, 6 * PI, h1, g.constant(1.0))
    m = local_mass(g.constant(0.0), p, Point(0.0, 0.5), 0.2, 1)
    # weight is largest near x = 0, so the ball takes more than its area share
    assert m > 6 * PI * integrate(ball_mask(g, Point(0.0, 0.5), 0.2))


@pytest.mark.parametrize("r,sign", [(0.0, 1), (0.45, 1), (0.1, 0)])
def test_local_mass_validation(r, sign):
    g = build_grid(32)
    with pytest.raises(ValueError):
        local_mass(g.constant(0.0), uniform_params(g, 1.0, 1.0), Point(0, 0), r, sign)
