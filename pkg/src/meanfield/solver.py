"""Critical points of the mean field functional.

``minimize`` is a preconditioned gradient flow (the search direction is the
``H¹`` gradient, obtained by inverting ``-Δ``) with Armijo backtracking.
``newton_refine`` runs damped Newton on the residual with MINRES inner solves.
``continuation_solve`` walks a path of parameter waypoints, warm-starting each
solve from the previous one and subdividing steps that fail.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.sparse.linalg import LinearOperator, minres

from .energy import (
    ProblemParams,
    energy_difference,
    functional_I,
    normalized_density,
    residual,
)
from .surface import TWO_PI, Field, integrate, inverse_laplacian

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolveConfig:
    max_iters: int = 2000
    grad_tol: float = 1e-8
    step0: float = 1.0
    backtrack: float = 0.5
    armijo: float = 1e-4
    min_step: float = 1e-12
    newton_iters: int = 30
    newton_tol: float = 1e-12
    krylov_tol: float = 1e-12
    krylov_maxiter: int = 500
    max_substeps: int = 6
    path: tuple = ()

    def __post_init__(self) -> None:
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack factor must lie in (0, 1)")
        for wp in self.path:
            if len(wp) != 2 or not all(math.isfinite(v) for v in wp):
                raise ValueError(f"bad waypoint {wp!r}")


@dataclass
class SolveResult:
    u: Field
    residual_norm: float
    iterations: int
    converged: bool
    energy: float
    rho1: float
    rho2: float
    energies: list = field(default_factory=list)
    status: str = ""


def _l2(f: Field) -> float:
    return math.sqrt(integrate(f * f))


def _gauge(u: Field) -> Field:
    return u - integrate(u)


def _result(u: Field, p: ProblemParams, iters: int, cfg: SolveConfig, energies, status: str) -> SolveResult:
    u = _gauge(u)
    rn = _l2(residual(u, p))
    try:
        e = functional_I(u, p)
    except FloatingPointError:
        e = math.nan
    conv = rn <= cfg.grad_tol
    if not conv and status == "converged":
        status = "residual above tolerance"
    return SolveResult(u, rn, iters, conv, e, p.rho1, p.rho2, list(energies), status if conv or status else "not converged")


def minimize(p: ProblemParams, u0: Optional[Field] = None, cfg: SolveConfig = SolveConfig()) -> SolveResult:
    """Descent on ``functional_I`` along the ``H¹`` gradient with Armijo backtracking.

    Every accepted step lowers the energy; the iterate is re-projected to mean
    zero after each step.  Failure to converge is reported, never raised.
    """
    u = _gauge(p.grid.constant(0.0) if u0 is None else u0)
    try:
        energies = [functional_I(u, p)]
    except FloatingPointError:
        return _result(u, p, 0, cfg, [], "non-finite energy at start")
    alpha = cfg.step0
    for it in range(cfg.max_iters):
        r = residual(u, p)
        if _l2(r) <= cfg.grad_tol:
            return _result(u, p, it, cfg, energies, "converged")
        d = -inverse_laplacian(r)
        slope = integrate(r * d)
        if not slope < 0:
            return _result(u, p, it, cfg, energies, "no descent direction")
        alpha = min(cfg.step0, alpha / cfg.backtrack)
        while True:
            try:
                de = energy_difference(u, alpha * d, p)
            except (FloatingPointError, OverflowError, ValueError):
                de = math.inf
            if de <= cfg.armijo * alpha * slope:
                break
            alpha *= cfg.backtrack
            if alpha < cfg.min_step:
                return _result(u, p, it, cfg, energies, "line search stalled")
        u = _gauge(u + alpha * d)
        energies.append(functional_I(u, p))
    return _result(u, p, cfg.max_iters, cfg, energies, "iteration limit")


def _jacobian_op(u: Field, p: ProblemParams) -> LinearOperator:
    """Linearized residual plus the mean, which removes the constant kernel."""
    g = u.grid
    n2 = g.n * g.n
    f1 = normalized_density(p.h1, u).values
    f2 = normalized_density(p.h2, -u).values
    ksq = (TWO_PI**2) * g.ksq()
    h2 = g.h**2

    def mv(x):
        v = x.reshape(g.shape)
        lap = np.fft.irfft2(ksq * np.fft.rfft2(v), s=g.shape)
        a1 = f1 * v - f1 * float(np.sum(f1 * v) * h2)
        a2 = f2 * v - f2 * float(np.sum(f2 * v) * h2)
        return (lap - p.rho1 * a1 - p.rho2 * a2 + float(v.sum() * h2)).ravel()

    return LinearOperator((n2, n2), matvec=mv, dtype=float)


def _preconditioner(grid) -> LinearOperator:
    ksq = (TWO_PI**2) * grid.ksq()
    ksq[0, 0] = 1.0
    inv = 1.0 / ksq
    n2 = grid.n * grid.n

    def mv(x):
        return np.fft.irfft2(inv * np.fft.rfft2(x.reshape(grid.shape)), s=grid.shape).ravel()

    return LinearOperator((n2, n2), matvec=mv, dtype=float)


def newton_refine(p: ProblemParams, u0: Field, cfg: SolveConfig = SolveConfig()) -> SolveResult:
    """Damped Newton on ``residual(u) = 0``.

    Steps come from MINRES on the linearization (the operator is symmetric but
    indefinite at saddle points) preconditioned by the spectral inverse
    Laplacian.  A step is accepted when it lowers the residual norm, halving
    the damping down to 1/64; stagnation ends the run with ``converged=False``.
    """
    u = _gauge(u0)
    F = residual(u, p)
    fn = _l2(F)
    target = min(cfg.newton_tol, cfg.grad_tol)
    M = _preconditioner(p.grid)
    for it in range(cfg.newton_iters):
        if fn <= target:
            return _result(u, p, it, cfg, [], "converged")
        J = _jacobian_op(u, p)
        step, info = minres(J, -F.values.ravel(), M=M, rtol=cfg.krylov_tol, maxiter=cfg.krylov_maxiter)
        if not np.all(np.isfinite(step)):
            return _result(u, p, it, cfg, [], "linear solve produced non-finite step")
        dv = _gauge(Field(p.grid, step.reshape(p.grid.shape)))
        lam = 1.0
        while True:
            try:
                trial = _gauge(u + lam * dv)
                Ft = residual(trial, p)
                ft = _l2(Ft)
            except (ValueError, FloatingPointError):
                ft = math.inf
            # below grad_tol only a clear gain counts; smaller changes are round-off
            need = 0.5 if fn <= cfg.grad_tol else 1 - 1e-4 * lam
            if ft < need * fn:
                break
            lam *= 0.5
            if lam < 1 / 64:
                why = "stagnated" if fn <= cfg.grad_tol else f"stagnated (linear solve info={info})"
                return _result(u, p, it, cfg, [], "converged" if fn <= cfg.grad_tol else why)
        u, F, fn = trial, Ft, ft
    return _result(u, p, cfg.newton_iters, cfg, [], "converged" if fn <= cfg.grad_tol else "Newton iteration limit")


def solve(p: ProblemParams, u0: Optional[Field] = None, cfg: SolveConfig = SolveConfig()) -> SolveResult:
    """Gradient flow followed by Newton polishing."""
    r = minimize(p, u0, cfg)
    if r.residual_norm <= cfg.newton_tol:
        return r
    nr = newton_refine(p, r.u, cfg)
    nr.iterations += r.iterations
    nr.energies = r.energies + [nr.energy]
    return nr


def _newton_from(p: ProblemParams, u: Field, cfg: SolveConfig) -> SolveResult:
    r = newton_refine(p, u, cfg)
    if not r.converged and max(p.rho1, p.rho2) < 8 * math.pi:
        # inside the coercive square the minimizer is a safe fallback
        r = solve(p, u, cfg)
    return r


def continuation_solve(path: Sequence[tuple[float, float]], h1: Field, h2: Field,
                       cfg: SolveConfig = SolveConfig(), u0: Optional[Field] = None) -> list[SolveResult]:
    """Solve at each waypoint, warm-starting from the previous solution.

    The first waypoint is solved by ``minimize`` then ``newton_refine``.  A
    failed step is retried through intermediate points (halving up to
    ``max_substeps`` times); if it still fails the path is truncated there and
    the failing result is the last entry.
    """
    if not path:
        raise ValueError("empty continuation path")
    results = []
    rho1, rho2 = path[0]
    p = ProblemParams(rho1, rho2, h1, h2)
    res = solve(p, u0, cfg)
    results.append(res)
    if not res.converged:
        return results
    prev = path[0]
    for wp in path[1:]:
        res = _advance(prev, wp, res.u, h1, h2, cfg)
        results.append(res)
        if not res.converged:
            break
        prev = wp
    return results


def _advance(a, b, u: Field, h1: Field, h2: Field, cfg: SolveConfig) -> SolveResult:
    """Continue from waypoint ``a`` (solution ``u``) to ``b``, subdividing on failure."""
    stack = [b]
    cur, cur_u = a, u
    depth = 0
    last = None
    while stack:
        tgt = stack[-1]
        last = _newton_from(ProblemParams(tgt[0], tgt[1], h1, h2), cur_u, cfg)
        if last.converged:
            stack.pop()
            cur, cur_u = tgt, last.u
            depth = max(0, depth - 1)
            continue
        depth += 1
        if depth > cfg.max_substeps:
            last.status = f"failed near ({tgt[0] / math.pi:.6g}π, {tgt[1] / math.pi:.6g}π) after subdivision"
            return last
        stack.append(((cur[0] + tgt[0]) / 2, (cur[1] + tgt[1]) / 2))
    return last


def init_from_testfunction(theta, grid=None) -> Field:
    """The test function ``φ(θ)`` shifted to mean zero."""
    from .testfn import phi  # deferred: testfn pulls in the concentration module

    return _gauge(phi(theta, grid))
