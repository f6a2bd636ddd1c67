"""Command-line front end: one subcommand per experiment, CSV on stdout.

Exit codes: 0 when the scan's invariants hold, 1 for usage errors, 2 for a
numerical failure (the offending row is named on stderr).  ``ρ`` values and
the blow-up grid step are read as multiples of π.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import blowup, concentration, energy, local_ineq, solver, testfn
from .surface import Field, Point, build_grid, write_field_csv

PI = math.pi


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits with 2 by default; usage errors are 1 here
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def pi_multiple(text: str) -> float:
    """``"6"``, ``"6pi"`` and ``"6π"`` all mean 6π."""
    s = text.strip().lower().replace("π", "pi")
    if s.endswith("pi"):
        s = s[:-2] or "1"
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a multiple of pi: {text!r}") from None
    if not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"not finite: {text!r}")
    return v * PI


def parse_path(text: str) -> list[tuple[float, float]]:
    """``"6,6;9,9;12,12"`` (multiples of π) into absolute waypoints."""
    out = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        bits = part.split(",")
        if len(bits) != 2:
            raise argparse.ArgumentTypeError(f"bad waypoint {part!r}")
        out.append((pi_multiple(bits[0]), pi_multiple(bits[1])))
    if not out:
        raise argparse.ArgumentTypeError("empty path")
    return out


def tau_arg(text: str):
    """``auto`` (calibrated from the fixed corpus) or a number in (0, 1)."""
    if text.strip().lower() == "auto":
        return None
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"tau must be 'auto' or a number: {text!r}") from None
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"tau must lie in (0, 1): {text!r}")
    return v


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return f"{float(v):.17g}"


def _writer(out):
    return csv.writer(out, lineterminator="\n")


def _summary(name: str, ok: bool, detail: str) -> None:
    print(f"{name}: {'PASS' if ok else 'FAIL'} {detail}", file=sys.stderr)


def _weight(grid, spec: str):
    try:
        return energy.weight_preset(grid, spec)
    except ValueError as e:
        raise UsageError(str(e)) from None


# ---------------------------------------------------------------- commands


def cmd_solve(a, out) -> int:
    grid = build_grid(a.n)
    h1 = _weight(grid, a.h1)
    h2 = _weight(grid, a.h2)
    path = a.path if a.path else [(a.rho1, a.rho2)]
    cfg = solver.SolveConfig(max_iters=a.max_iters, grad_tol=a.tol)
    results = solver.continuation_solve(path, h1, h2, cfg)
    w = _writer(out)
    w.writerow(["rho1", "rho2", "converged", "residual", "iterations", "energy"])
    for r in results:
        w.writerow([_fmt(r.rho1), _fmt(r.rho2), _fmt(r.converged), _fmt(r.residual_norm),
                    _fmt(r.iterations), _fmt(r.energy)])
    last = results[-1]
    if a.field_out:
        write_field_csv(last.u, a.field_out)
    ok = last.converged and len(results) == len(path)
    _summary("solve", ok, f"waypoints={len(results)}/{len(path)} status={last.status!r}")
    return 0 if ok else 2


def cmd_mt_scan(a, out) -> int:
    if a.samples < 1:
        raise UsageError("--samples must be at least 1")
    grid = build_grid(a.n)
    amps = [float(x) for x in a.amplitudes.split(",")]
    w = _writer(out)
    w.writerow(["sample_id", "dirichlet", "lhs", "slack"])
    worst = None
    bad = None
    for sid, u in energy.field_corpus(grid, a.seed, a.samples, amps):
        row = energy.mt2_probe(u, sid)
        w.writerow([row.sample_id, _fmt(row.dirichlet), _fmt(row.lhs), _fmt(row.slack)])
        if not math.isfinite(row.slack) and bad is None:
            bad = sid
        if worst is None or row.slack < worst[1]:
            worst = (sid, row.slack)
        if a.bound is not None and row.slack < -a.bound and bad is None:
            bad = sid
    ok = bad is None
    _summary("mt-scan", ok, f"min_slack={worst[1]:.6g} at {worst[0]}" + ("" if ok else f" offending={bad}"))
    return 0 if ok else 2


def cmd_testfn_scan(a, out) -> int:
    if a.steps < 2 or not 0 < a.tmin < a.tmax <= a.delta:
        raise UsageError("need --steps >= 2 and 0 < tmin < tmax <= delta")
    ts = testfn.log_scan(a.tmin, a.tmax, a.steps)
    fam = testfn.t1_family(ts, a.delta) if a.axis == "t1" else testfn.t2_family(ts, a.delta)
    rows = testfn.energy_scan(fam, a.rho1, a.rho2, a.h1, a.h2)
    w = _writer(out)
    w.writerow(["t1", "t2", "x1x", "x1y", "x2x", "x2y", "mean_phi", "dirichlet",
                "log_int_exp", "log_int_exp_neg", "I_value"])
    for r in rows:
        th = r.theta
        w.writerow([_fmt(v) for v in (r.t1, r.t2, th.x1.x, th.x1.y, th.x2.x, th.x2.y, r.mean_phi,
                                      r.dirichlet, r.log_int_exp, r.log_int_exp_neg, r.I_value)])
    fits = [testfn.dirichlet_estimate_check(rows, a.axis), testfn.mean_estimate_check(rows, a.axis)]
    names = ["dirichlet", "mean"]
    rho = a.rho1 if a.axis == "t1" else a.rho2
    if rho > 0 and a.rho1 == a.rho2:
        fits.append(testfn.energy_slope_check(rows, rho, a.axis))
        names.append("energy")
    ok = all(f.passed for f in fits)
    detail = " ".join(f"{n}_slope={f.slope:.6g}(target {f.target:.6g}, tol {f.tolerance:g})"
                      for n, f in zip(names, fits))
    inside = sum(th.in_X_nu(a.nu) for th in fam)
    detail += f" in_X_nu={inside}/{len(fam)}"
    _summary("testfn-scan", ok, detail)
    return 0 if ok else 2


def _conc_density(grid, spec: str, seed: int) -> Field:
    name, _, arg = spec.partition(":")
    if name == "uniform" and not arg:
        return grid.constant(1.0)
    if name == "bubble":
        try:
            cx, cy, wd = (float(s) for s in arg.split(","))
        except ValueError:
            raise UsageError(f"bad density {spec!r}; expected bubble:cx,cy,w") from None
        return concentration.bubble_density(grid, Point(cx, cy), wd)
    if name == "field":
        try:
            amp = float(arg) if arg else 1.0
        except ValueError:
            raise UsageError(f"bad density {spec!r}; expected field:amplitude") from None
        rng = np.random.default_rng(seed)
        u = amp * concentration.smooth_field(grid, rng)
        return concentration.density_from_exponent(u)
    raise UsageError(f"unknown density {spec!r}")


def cmd_conc_map(a, out) -> int:
    grid = build_grid(a.n)
    f = _conc_density(grid, a.density, a.seed)
    cfg = concentration.ConcConfig(R=a.R, delta=a.delta)
    cfg = cfg.with_tau(concentration.calibrated_tau(cfg) if a.tau is None else a.tau)
    try:
        cm = concentration.concentration_map(f, cfg)
    except concentration.CalibrationError as e:
        _summary("conc-map", False, str(e))
        return 2
    except concentration.ProjectionUndefined as e:
        _summary("conc-map", False, str(e))
        return 2
    w = _writer(out)
    w.writerow(["beta_x", "beta_y", "sigma", "at_apex", "tau_used", "max_T"])
    bx, by = ("", "") if cm.at_apex else (_fmt(cm.beta.x), _fmt(cm.beta.y))
    w.writerow([bx, by, _fmt(cm.scale), _fmt(cm.at_apex), _fmt(cfg.tau), _fmt(cm.max_T)])
    rep = concentration.check_conc_properties(cm, f)
    ok = rep.b_holds and rep.a_holds
    _summary("conc-map", ok, f"two_sided_mass={rep.b_holds} center_distance={rep.a_holds}")
    return 0 if ok else 2


def cmd_blowup_grid(a, out) -> int:
    step = a.step / PI
    try:
        res = blowup.admissible_pair_search(step, a.lo / PI, a.hi / PI, keep_near=a.near_count if a.near_misses else 0)
    except ValueError as e:
        raise UsageError(str(e)) from None
    w = _writer(out)
    w.writerow(["step", "pairs_found"])
    w.writerow([_fmt(a.step), _fmt(len(res.pairs))])
    if a.near_misses:
        with open(a.near_misses, "w", newline="") as fh:
            nw = _writer(fh)
            nw.writerow(["m1", "m2", "residual"])
            for m1, m2, r in res.near_misses:
                nw.writerow([_fmt(m1 * PI), _fmt(m2 * PI), _fmt(r * PI**2)])
    expect_empty = a.lo >= 4 * PI - 1e-12 and a.hi <= 16 * PI + 1e-12
    ok = (not res.pairs) if expect_empty else True
    detail = f"pairs_found={len(res.pairs)} cells={res.cells}"
    if not ok:
        p = res.pairs[0]
        detail += f" offending=({p.m1:.6g}π, {p.m2:.6g}π)"
    _summary("blowup-grid", ok, detail)
    return 0 if ok else 2


def cmd_gradcheck(a, out) -> int:
    if a.samples < 1:
        raise UsageError("--samples must be at least 1")
    grid = build_grid(a.n)
    p = energy.ProblemParams(a.rho1, a.rho2, _weight(grid, a.h1), _weight(grid, a.h2))
    errs = energy.gradient_check(p, a.seed, a.samples)
    w = _writer(out)
    w.writerow(["sample_id", "rel_error"])
    for i, e in enumerate(errs):
        w.writerow([_fmt(i), _fmt(e)])
    worst = int(np.argmax(errs))
    ok = errs[worst] <= a.max_error
    _summary("gradcheck", ok, f"max_rel_error={errs[worst]:.3g} at sample {worst}")
    return 0 if ok else 2


def cmd_local_scan(a, out) -> int:
    ss = [float(x) for x in a.s.split(",")]
    if any(not 0 < s < a.r for s in ss):
        raise UsageError("every s must lie in (0, r)")
    p = (0.0, 0.0)
    prof = local_ineq.gaussian_profile(a.amplitude)
    w = _writer(out)
    w.writerow(["s", "r", "lhs", "rhs", "slack"])
    combined = []
    for s in ss:
        u = local_ineq.scaled_profile(prof, p, s)
        b = local_ineq.ball_lemma_probe(u, p, s, n_rad=a.res, n_theta=a.res)
        an = local_ineq.annulus_lemma_probe(u, p, s, a.r, n_rad=a.res, n_theta=a.res)
        for row in (b, an):
            w.writerow([_fmt(row.s), _fmt(row.r), _fmt(row.lhs), _fmt(row.rhs), _fmt(row.slack)])
        combined.append(b.slack + an.slack)
    ok = all(math.isfinite(c) for c in combined)
    _summary("local-scan", ok, f"min_combined_slack={min(combined):.6g}")
    return 0 if ok else 2


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="meanfield", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"meanfield {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", help="continuation solve along a path of (rho1, rho2)")
    s.add_argument("--rho1", type=pi_multiple, default=6 * PI)
    s.add_argument("--rho2", type=pi_multiple, default=6 * PI)
    s.add_argument("--n", type=int, default=64)
    s.add_argument("--h1", default="const")
    s.add_argument("--h2", default="const")
    s.add_argument("--path", type=parse_path, help='waypoints like "6,6;9,9;12,12"')
    s.add_argument("--max-iters", type=int, default=2000)
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--field-out", help="CSV dump of the final field")
    s.set_defaults(func=cmd_solve)

    m = sub.add_parser("mt-scan", help="Moser-Trudinger probe over a seeded corpus")
    m.add_argument("--samples", type=int, default=10)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--n", type=int, default=64)
    m.add_argument("--amplitudes", default="1,2,4,8")
    m.add_argument("--bound", type=float, help="fail when some slack is below -bound")
    m.set_defaults(func=cmd_mt_scan)

    t = sub.add_parser("testfn-scan", help="estimates along the two-bubble family")
    t.add_argument("--delta", type=float, default=testfn.DEFAULT_DELTA)
    t.add_argument("--nu", type=float, default=testfn.DEFAULT_NU)
    t.add_argument("--tmin", type=float, default=1e-3)
    t.add_argument("--tmax", type=float, default=1e-2)
    t.add_argument("--steps", type=int, default=7)
    t.add_argument("--axis", choices=("t1", "t2"), default="t1")
    t.add_argument("--rho1", type=pi_multiple, default=12 * PI)
    t.add_argument("--rho2", type=pi_multiple, default=12 * PI)
    t.add_argument("--h1", default="const")
    t.add_argument("--h2", default="const")
    t.set_defaults(func=cmd_testfn_scan)

    c = sub.add_parser("conc-map", help="center of mass and scale of a density")
    c.add_argument("--n", type=int, default=64)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--density", default="bubble:0.3,0.7,0.02",
                   help="uniform | bubble:cx,cy,w | field:amplitude")
    c.add_argument("--R", type=float, default=2.0)
    c.add_argument("--delta", type=float, default=0.1)
    c.add_argument("--tau", type=tau_arg, default=None,
                   help="mass threshold; 'auto' (default) calibrates it on the fixed corpus")
    c.set_defaults(func=cmd_conc_map)

    b = sub.add_parser("blowup-grid", help="search for quantized mass pairs")
    b.add_argument("--step", type=pi_multiple, default=1e-3 * PI)
    b.add_argument("--lo", type=pi_multiple, default=4 * PI)
    b.add_argument("--hi", type=pi_multiple, default=16 * PI)
    b.add_argument("--near-misses", help="CSV path for the closest cells")
    b.add_argument("--near-count", type=int, default=20)
    b.set_defaults(func=cmd_blowup_grid)

    g = sub.add_parser("gradcheck", help="gradient against finite differences")
    g.add_argument("--n", type=int, default=64)
    g.add_argument("--samples", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--rho1", type=pi_multiple, default=6 * PI)
    g.add_argument("--rho2", type=pi_multiple, default=10 * PI)
    g.add_argument("--h1", default="cosx")
    g.add_argument("--h2", default="siny")
    g.add_argument("--max-error", type=float, default=1e-6)
    g.set_defaults(func=cmd_gradcheck)

    lo = sub.add_parser("local-scan", help="ball and annulus probes for a dilated profile")
    lo.add_argument("--s", default="0.1,0.05,0.025")
    lo.add_argument("--r", type=float, default=0.2)
    lo.add_argument("--amplitude", type=float, default=3.0)
    lo.add_argument("--res", type=int, default=256)
    lo.set_defaults(func=cmd_local_scan)
    return ap


def main(argv: Optional[Sequence[str]] = None, out=None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    out = sys.stdout if out is None else out
    try:
        return a.func(a, out)
    except UsageError as e:
        print(f"meanfield {a.command}: error: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"meanfield {a.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
