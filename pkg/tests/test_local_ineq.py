import math

import numpy as np
import pytest

from meanfield.local_ineq import (
    HarmonicBlend,
    PlanarPatch,
    annulus_lemma_probe,
    ball_lemma_probe,
    boundary_oscillation,
    combined_slack,
    dirichlet_polar,
    gaussian_profile,
    integrate_polar,
    kelvin_integral_identity_check,
    kelvin_map,
    kelvin_transform,
    scaled_profile,
)

P = (0.5, 0.5)
SCAN = (0.2, 0.1, 0.05, 0.025)


def const(c):
    return lambda X, Y: np.full(np.broadcast(X, Y).shape, float(c))


def log_bump(X, Y):
    return np.log1p((X - P[0]) ** 2 + (Y - P[1]) ** 2)


def sin4(X, Y):
    return 4 * np.sin(2 * math.pi * X)


def test_patch_area():
    patch = PlanarPatch(P, 0.1)
    assert patch.area == pytest.approx(math.pi * 0.04, rel=1e-12)
    with pytest.raises(ValueError):
        PlanarPatch(P, 0.5)


def test_polar_annulus_quadrature():
    # ∫_{A(a,b)} |x-p|² = π(b⁴ - a⁴)/2
    v = integrate_polar(lambda X, Y: (X - P[0]) ** 2 + (Y - P[1]) ** 2, P, 0.05, 0.2)
    assert v == pytest.approx(math.pi * (0.2**4 - 0.05**4) / 2, rel=1e-12)


def test_dirichlet_polar_linear():
    # |∇(3x)|² = 9 over a disk of radius 0.1
    assert dirichlet_polar(lambda X, Y: 3 * X, P, 0.0, 0.1) == pytest.approx(9 * math.pi * 0.01, rel=1e-6)


@pytest.mark.parametrize("s,r", [(0.0, 0.1), (0.1, 0.1), (0.2, 0.1), (-0.1, 0.1)])
def test_kelvin_rejects_bad_radii(s, r):
    with pytest.raises(ValueError):
        kelvin_transform(const(0), P, s, r)


def test_kelvin_boundary_swap():
    s, r = 0.03, 0.15
    th = np.linspace(0, 2 * math.pi, 17)
    for a, b in ((s, r), (r, s)):
        KX, KY = kelvin_map(P[0] + a * np.cos(th), P[1] + a * np.sin(th), P, s, r)
        np.testing.assert_allclose(np.hypot(KX - P[0], KY - P[1]), b, rtol=1e-14)


def test_kelvin_involution_on_samples():
    rng = np.random.default_rng(0)
    s, r = 0.02, 0.2
    rho = rng.uniform(s / 2, 2 * r, 1000)
    th = rng.uniform(0, 2 * math.pi, 1000)
    X, Y = P[0] + rho * np.cos(th), P[1] + rho * np.sin(th)
    KX, KY = kelvin_map(*kelvin_map(X, Y, P, s, r), P, s, r)
    assert np.max(np.hypot(KX - X, KY - Y)) < 1e-12


def test_kelvin_constant_fixed():
    ut = kelvin_transform(const(2.5), P, 0.05, 0.1)
    X = np.array([0.5 + 0.03, 0.5 + 0.2])
    np.testing.assert_array_equal(ut(X, np.full(2, 0.5)), 2.5)


def test_kelvin_inner_value_fills_hole():
    ut = kelvin_transform(log_bump, P, 0.05, 0.1, inner_value=-1.0)
    assert ut(np.array([0.5]), np.array([0.51]))[0] == -1.0


@pytest.mark.parametrize("u", [const(0.0), log_bump, sin4], ids=["zero", "log1p", "sin"])
@pytest.mark.parametrize("s,r", [(0.02, 0.1), (0.05, 0.2)])
def test_kelvin_identities(u, s, r):
    rep = kelvin_integral_identity_check(u, P, s, r)
    assert rep.rel_error <= 1e-3
    assert rep.grad_rel_error <= 1e-3
    assert rep.involution_error <= 1e-12


def test_kelvin_zero_both_sides_equal_area():
    s, r = 0.05, 0.2
    rep = kelvin_integral_identity_check(const(0.0), P, s, r)
    # s²r² ∫ ρ⁻⁴ over A(s, r) is the annulus area again
    assert rep.lhs == pytest.approx(math.pi * (r * r - s * s), rel=1e-12)
    assert rep.rhs == pytest.approx(math.pi * (r * r - s * s), rel=1e-10)


@pytest.mark.parametrize("s", SCAN)
def test_ball_probe_constant(s):
    row = ball_lemma_probe(const(1.7), P, s)
    assert row.slack == pytest.approx(-2 * math.log(math.pi / 4), abs=1e-10)


def test_ball_probe_range():
    with pytest.raises(ValueError):
        ball_lemma_probe(const(0.0), P, 0.3)


def test_ball_probe_scaled_bump_bounded():
    v = gaussian_profile()
    slacks = [ball_lemma_probe(scaled_profile(v, P, s), P, s).slack for s in SCAN]
    # the profile and the ball dilate together, so the slack is scale free
    assert max(slacks) - min(slacks) < 1e-6
    assert min(slacks) == pytest.approx(0.7875, abs=1e-3)


def test_ball_probe_sinusoid_finite():
    row = ball_lemma_probe(sin4, P, 0.1)
    assert math.isfinite(row.slack)
    assert row.lhs > 2 * math.log(math.pi * 0.0025)


@pytest.mark.parametrize("s,r", [(0.02, 0.1), (0.05, 0.2), (0.01, 0.2)])
def test_annulus_probe_constant(s, r):
    row = annulus_lemma_probe(const(-0.4), P, s, r)
    expected = -4 * math.log(s) - 2 * math.log(math.pi * (r * r - s * s))
    assert row.slack == pytest.approx(expected, abs=1e-10)
    assert row.flags == ()


def test_annulus_probe_flags_nonconstant_boundary():
    row = annulus_lemma_probe(sin4, P, 0.02, 0.1, blend=False)
    assert row.flags and "non-constant boundary" in row.flags[0]
    assert annulus_lemma_probe(sin4, P, 0.02, 0.1, blend=True).flags == ()


def test_harmonic_blend_matches_trace_and_constant():
    r = 0.1
    hb = HarmonicBlend.build(sin4, P, r)
    th = np.linspace(0, 2 * math.pi, 50, endpoint=False)
    inner = sin4(P[0] + r * np.cos(th), P[1] + r * np.sin(th))
    just_out = hb(P[0] + r * (1 + 1e-9) * np.cos(th), P[1] + r * (1 + 1e-9) * np.sin(th))
    np.testing.assert_allclose(just_out, inner, atol=1e-6)
    assert boundary_oscillation(hb, P, 2 * r) < 1e-10
    assert hb.outer_value == pytest.approx(float(np.mean(inner)), abs=1e-12)


def test_harmonic_blend_ring_energy_matches_quadrature():
    hb = HarmonicBlend.build(sin4, P, 0.1)
    direct = dirichlet_polar(hb, P, 0.1 * (1 + 1e-9), 0.2 * (1 - 1e-9))
    assert hb.ring_energy() == pytest.approx(direct, rel=1e-4)


def test_annulus_probe_sinusoid_finite():
    row = annulus_lemma_probe(sin4, P, 0.02, 0.1)
    assert math.isfinite(row.slack)


def test_combined_constant_closed_form():
    # right-hand sides: +4 log s and -4 log s cancel; the ball areas bring in
    # 4 log s on the left, so the total is -4 log s plus a bounded term
    r = 0.2
    vals = [combined_slack(const(0.0), P, s, r) for s in SCAN[1:]]
    expected = [-2 * math.log(math.pi / 4) - 4 * math.log(s) - 2 * math.log(math.pi * (r * r - s * s))
                for s in SCAN[1:]]
    np.testing.assert_allclose(vals, expected, atol=1e-10)
    assert min(vals) > 0


def test_combined_scaled_bump_bounded_below():
    r = 0.2
    v = gaussian_profile()
    vals = [combined_slack(scaled_profile(v, P, s), P, s, r) for s in SCAN[1:]]
    assert min(vals) > 0
    # the annulus part alone behaves like -4 log s and is not bounded above
    diffs = np.diff(vals)
    assert np.all(diffs > 0)
