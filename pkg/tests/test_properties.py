import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from meanfield.blowup import quantization_residual, quantization_roots
from meanfield.concentration import ConcConfig, bubble_density, concentration_map, sigma_at
from meanfield.energy import (
    ProblemParams,
    energy_difference,
    functional_I,
    mt2_lhs,
    residual,
    weight_preset,
)
from meanfield.local_ineq import kelvin_map
from meanfield.surface import Field, Point, band_limited_field, build_grid, geodesic_distance, integrate
from meanfield.testfn import TestParams, phi

PI = math.pi
G32 = build_grid(32)
G64 = build_grid(64)
SETTINGS = settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow])

unit = st.floats(0.0, 1.0, exclude_max=True, allow_nan=False)
rho = st.floats(0.5, 20 * PI)
seeds = st.integers(0, 2**32 - 1)
shifts = st.tuples(st.integers(0, 31), st.integers(0, 31))


def field(seed, amp=1.0, grid=G32):
    return amp * band_limited_field(grid, np.random.default_rng(seed))


def params(r1, r2, grid=G32):
    return ProblemParams(r1, r2, weight_preset(grid, "cosx"), weight_preset(grid, "siny"))


def roll(f, s):
    return Field(f.grid, np.roll(f.values, s, axis=(0, 1)))


@SETTINGS
@given(seeds, rho, rho, shifts)
def test_functional_translation_invariance(seed, r1, r2, s):
    u = field(seed)
    p = params(r1, r2)
    moved = ProblemParams(r1, r2, roll(p.h1, s), roll(p.h2, s))
    assert functional_I(roll(u, s), moved) == pytest.approx(functional_I(u, p), rel=1e-11, abs=1e-11)


@SETTINGS
@given(seeds, rho, rho)
def test_functional_sign_swap(seed, r1, r2):
    # I(-u) with roles exchanged equals I(u)
    u = field(seed)
    p = params(r1, r2)
    assert functional_I(-u, p.swapped()) == pytest.approx(functional_I(u, p), rel=1e-12, abs=1e-12)


@SETTINGS
@given(seeds, rho, rho, st.floats(-50, 50))
def test_functional_ignores_constants(seed, r1, r2, c):
    u = field(seed)
    p = params(r1, r2)
    assert functional_I(u + c, p) == pytest.approx(functional_I(u, p), rel=1e-10, abs=1e-9)


@SETTINGS
@given(seeds, rho, rho)
def test_residual_has_mean_zero(seed, r1, r2):
    r = residual(field(seed, 2.0), params(r1, r2))
    assert abs(integrate(r)) < 1e-10 * (1 + r1 + r2)


@SETTINGS
@given(seeds, seeds, rho, rho, st.floats(1e-6, 1.0))
def test_energy_difference_consistent(sa, sb, r1, r2, scale):
    u, v = field(sa), field(sb, scale)
    p = params(r1, r2)
    direct = functional_I(u + v, p) - functional_I(u, p)
    assert energy_difference(u, v, p) == pytest.approx(direct, rel=1e-8, abs=1e-9)


@SETTINGS
@given(seeds, st.floats(0.1, 10.0))
def test_mt2_lhs_even(seed, amp):
    u = field(seed, amp)
    assert mt2_lhs(-u) == pytest.approx(mt2_lhs(u), rel=1e-12, abs=1e-12)


@SETTINGS
@given(st.floats(0.0, 1e4))
def test_quantization_roots_solve(m2):
    plus, minus = quantization_roots(m2)
    assert plus >= minus
    for m1 in (plus, minus):
        assert abs(float(quantization_residual(m1, m2))) <= 1e-9 * max(1.0, m1 * m1)
    # the relation is symmetric in its two arguments
    assert float(quantization_residual(m2, plus)) == float(quantization_residual(plus, m2))


@SETTINGS
@given(st.floats(0.001, 0.1), st.floats(1.1, 2.5), st.floats(0, 2 * PI), st.floats(0.05, 5.0))
def test_kelvin_involution(s, ratio, ang, mag):
    r = s * ratio
    p = (0.1, -0.3)
    x = p[0] + mag * s * math.cos(ang)
    y = p[1] + mag * s * math.sin(ang)
    kx, ky = kelvin_map(x, y, p, s, r)
    bx, by = kelvin_map(kx, ky, p, s, r)
    assert bx == pytest.approx(x, abs=1e-12) and by == pytest.approx(y, abs=1e-12)
    # |K(x) - p| · |x - p| = r s
    d0 = math.hypot(x - p[0], y - p[1])
    d1 = math.hypot(float(kx) - p[0], float(ky) - p[1])
    assert d0 * d1 == pytest.approx(r * s, rel=1e-12)


@SETTINGS
@given(unit, unit, unit, unit)
def test_geodesic_metric(ax, ay, bx, by):
    a, b = Point(ax, ay), Point(bx, by)
    d = geodesic_distance(a, b)
    assert 0 <= d <= math.sqrt(0.5) + 1e-15
    assert d == geodesic_distance(b, a)
    assert geodesic_distance(a.shifted(1.0, -2.0), b) == pytest.approx(d, abs=1e-12)


@SETTINGS
@given(unit, unit, st.floats(0.005, 0.1), unit, unit, st.floats(0.005, 0.1))
def test_phi_swap_antisymmetry(ax, ay, t1, bx, by, t2):
    th = TestParams(Point(ax, ay), min(t1, 0.1), Point(bx, by), t2)
    np.testing.assert_array_equal(phi(th.swapped(), G64).values, -phi(th, G64).values)


@pytest.fixture(scope="module")
def bubble_maps():
    cfg = ConcConfig()
    out = []
    for w in (0.02, 0.05):
        f = bubble_density(G64, Point(0.3, 0.6), w)
        out.append((f, concentration_map(f, cfg, refine_all=True)))
    return cfg, out


@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.tuples(st.integers(0, 63), st.integers(0, 63)), st.tuples(st.integers(0, 63), st.integers(0, 63)),
       st.integers(0, 1))
def test_sigma_distance_property(bubble_maps, a, b, k):
    cfg, maps = bubble_maps
    _, cm = maps[k]
    sa, sb = cm.sigma[a], cm.sigma[b]
    d = geodesic_distance(G64.node_point(*a), G64.node_point(*b))
    assert d <= cfg.R0 * max(sa, sb) + min(sa, sb) + 3 * G64.h


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 63), st.integers(0, 63))
def test_sigma_translation_covariant(i, j):
    f = bubble_density(G64, Point(0.3, 0.6), 0.03)
    cfg = ConcConfig()
    x = G64.node_point(i, j)
    moved = Field(G64, np.roll(f.values, (5, -7), axis=(0, 1)))
    assert sigma_at(x.shifted(5 * G64.h, -7 * G64.h), moved, cfg) == pytest.approx(sigma_at(x, f, cfg), abs=1e-12)
