"""Shared numerical kernels: quadrature, ODE integration, matrix exponentials
and a multi-start derivative-free optimizer.

Every routine takes an explicit tolerance spec so that callers can tighten or
relax accuracy without touching module globals.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.integrate
import scipy.linalg
import scipy.optimize

from .errors import OdeError, QuadratureError, ValidationError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class QuadratureSpec:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-13
    max_subdivisions: int = 2000

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValidationError("quadrature tolerances must be positive")
        if self.max_subdivisions < 1:
            raise ValidationError("max_subdivisions must be >= 1")


@dataclass(frozen=True)
class OdeSpec:
    first_step: float = 1e-3
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_steps: int = 100_000

    def __post_init__(self):
        if not self.first_step > 0:
            raise ValidationError("first_step must be positive")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValidationError("ODE tolerances must be positive")
        if self.max_steps < 1:
            raise ValidationError("max_steps must be >= 1")


@dataclass(frozen=True)
class OptimizerSpec:
    max_iterations: int = 20_000
    tol: float = 1e-8
    restarts: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 1:
            raise ValidationError("restarts must be >= 1")
        if not self.tol > 0:
            raise ValidationError("optimizer tolerance must be positive")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")


# --------------------------------------------------------------------------
# Quadrature: globally adaptive 21-point Gauss-Kronrod, vectorized over nodes.

_XGK = np.array([
    0.995657163025808080735527280689003, 0.973906528517171720077964012084452,
    0.930157491355708226001207180059508, 0.865063366688984510732096688423493,
    0.780817726586416897063717578345042, 0.679409568299024406234327365114874,
    0.562757134668604683339000099272694, 0.433395394129247190799265943165784,
    0.294392862701460198131126603103866, 0.148874338981631210884826001129720,
    0.0,
])
_WGK = np.array([
    0.011694638867371874278064396062192, 0.032558162307964727478818972459390,
    0.054755896574351996031381300244580, 0.075039674810919952767043140916190,
    0.093125454583697605535065465083366, 0.109387158802297641899210590325805,
    0.123491976262065851077208067087524, 0.134709217311473325928054001771707,
    0.142775938577060080797094273138717, 0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
])
_WG = np.array([
    0.066671344308688137593568809893332, 0.149451349150580593145776339657697,
    0.219086362515982043995534934228163, 0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
])

# full 21-node rule on [-1, 1]
_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_KWEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
_GWEIGHTS = np.zeros(21)
_GWEIGHTS[[1, 3, 5, 7, 9]] = _WG
_GWEIGHTS[[19, 17, 15, 13, 11]] = _WG

_EPS = np.finfo(float).eps
_TINY = np.finfo(float).tiny

# segment kinds for the variable substitution
_FINITE, _RIGHT_TAIL, _LEFT_TAIL = 0, 1, 2


def _segments(a: float, b: float, points: Sequence[float] | None):
    """Split [a, b] at the interior breakpoints; infinite ends become tails."""
    inner = sorted({float(p) for p in (points or ()) if a < p < b and math.isfinite(p)})
    if math.isinf(a) and math.isinf(b) and not inner:
        inner = [0.0]
    knots = [a, *inner, b]
    segs = []
    for lo, hi in zip(knots[:-1], knots[1:]):
        if math.isinf(lo):
            segs.append((_LEFT_TAIL, hi, 0.0, 1.0))
        elif math.isinf(hi):
            segs.append((_RIGHT_TAIL, lo, 0.0, 1.0))
        elif hi > lo:
            segs.append((_FINITE, 0.0, lo, hi))
    return segs


def _gk21(f, kind, anchor, lo, hi):
    """Apply the 21-point rule to a batch of intervals in one integrand call."""
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    u = center[:, None] + half[:, None] * _NODES[None, :]
    jac = np.ones_like(u)
    x = u.copy()
    tail = kind != _FINITE
    if np.any(tail):
        ut = u[tail]
        jt = 1.0 / (ut * ut)
        step = (1.0 - ut) / ut
        sign = np.where(kind[tail] == _RIGHT_TAIL, 1.0, -1.0)[:, None]
        x[tail] = anchor[tail][:, None] + sign * step
        jac[tail] = jt
    fx = np.asarray(f(x.ravel()), dtype=float).reshape(x.shape)
    if not np.all(np.isfinite(fx)):
        bad = x[~np.isfinite(fx)][0]
        raise QuadratureError(f"integrand not finite at x={bad!r}", math.nan, math.inf)
    fx = fx * jac
    resk = fx @ _KWEIGHTS
    resg = fx @ _GWEIGHTS
    resabs = np.abs(fx) @ _KWEIGHTS
    reskh = 0.5 * resk
    resasc = np.abs(fx - reskh[:, None]) @ _KWEIGHTS
    result = resk * half
    err = np.abs((resk - resg) * half)
    resasc = resasc * half
    resabs = resabs * half
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = resasc * np.minimum(1.0, (200.0 * err / resasc) ** 1.5)
    err = np.where((resasc != 0) & (err != 0), scaled, err)
    floor = 50.0 * _EPS * resabs
    err = np.where(resabs > _TINY / (50.0 * _EPS), np.maximum(floor, err), err)
    return result, err


def integrate(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    spec: QuadratureSpec | None = None,
    points: Sequence[float] | None = None,
) -> float:
    """Integrate ``f`` over ``[a, b]`` to the tolerances in ``spec``.

    ``f`` must be vectorized: it receives a 1-d array of abscissae and returns
    an array of the same shape. Infinite limits are handled by the substitution
    ``x = a + (1 - u) / u``. ``points`` are interior breakpoints (kinks or
    jumps of the integrand) at which the interval is split up front.

    Raises :class:`QuadratureError` carrying the best estimate and its error
    bound when the tolerance cannot be met within ``spec.max_subdivisions``.
    """
    spec = spec or QuadratureSpec()
    a, b = float(a), float(b)
    if math.isnan(a) or math.isnan(b) or a > b:
        raise ValidationError(f"integration limits must satisfy a <= b, got {a}, {b}")
    if a == b:
        return 0.0
    segs = _segments(a, b, points)
    kind = np.array([s[0] for s in segs])
    anchor = np.array([s[1] for s in segs], dtype=float)
    lo = np.array([s[2] for s in segs], dtype=float)
    hi = np.array([s[3] for s in segs], dtype=float)
    res, err = _gk21(f, kind, anchor, lo, hi)

    while True:
        total = float(np.sum(res))
        total_err = float(np.sum(err))
        target = max(spec.abs_tol, spec.rel_tol * abs(total))
        if total_err <= target:
            return total
        # split the largest-error intervals until the rest fits in half the budget
        order = np.argsort(err)[::-1]
        rest = total_err - np.cumsum(err[order])
        n_split = int(np.searchsorted(-rest, -0.5 * target)) + 1
        pick = order[:n_split]
        width = hi[pick] - lo[pick]
        mid = 0.5 * (lo[pick] + hi[pick])
        splittable = (width > 64 * _EPS * np.maximum(np.abs(mid), _TINY)) & (mid > lo[pick]) & (mid < hi[pick])
        pick, mid = pick[splittable], mid[splittable]
        if pick.size == 0 or len(res) + pick.size > spec.max_subdivisions:
            raise QuadratureError(
                "adaptive quadrature did not converge", total, total_err
            )
        k2, a2 = kind[pick], anchor[pick]
        new_lo = np.concatenate([lo[pick], mid])
        new_hi = np.concatenate([mid, hi[pick]])
        new_kind = np.concatenate([k2, k2])
        new_anchor = np.concatenate([a2, a2])
        r2, e2 = _gk21(f, new_kind, new_anchor, new_lo, new_hi)
        keep = np.ones(len(res), dtype=bool)
        keep[pick] = False
        kind = np.concatenate([kind[keep], new_kind])
        anchor = np.concatenate([anchor[keep], new_anchor])
        lo = np.concatenate([lo[keep], new_lo])
        hi = np.concatenate([hi[keep], new_hi])
        res = np.concatenate([res[keep], r2])
        err = np.concatenate([err[keep], e2])


# --------------------------------------------------------------------------
# ODE integration


class _StepBudgetExceeded(Exception):
    pass


class _Rhs:
    """Scalar right-hand side adapter that tracks the last finite state."""

    def __init__(self, rhs, max_evals):
        self.rhs = rhs
        self.max_evals = max_evals
        self.nfev = 0
        self.last = (math.nan, math.nan)

    def __call__(self, t, y):
        self.nfev += 1
        if self.nfev > self.max_evals:
            raise _StepBudgetExceeded
        val = float(self.rhs(t, float(y[0])))
        if not math.isfinite(val):
            raise OdeError("right-hand side is not finite", *self.last)
        self.last = (float(t), float(y[0]))
        return np.array([val])


def _run_ode(rhs, t0, y0, t_end, spec, dense):
    wrapped = _Rhs(rhs, 12 * spec.max_steps + 2)
    first = min(spec.first_step, abs(t_end - t0)) if t_end != t0 else None
    try:
        sol = scipy.integrate.solve_ivp(
            wrapped, (t0, t_end), [float(y0)], method="DOP853",
            rtol=spec.rel_tol, atol=spec.abs_tol, first_step=first,
            dense_output=dense,
        )
    except _StepBudgetExceeded:
        raise OdeError(f"exceeded {spec.max_steps} steps", *wrapped.last) from None
    if sol.status != 0 or not np.all(np.isfinite(sol.y)):
        raise OdeError(f"integration failed: {sol.message}", *wrapped.last)
    return sol


def solve_ivp(
    rhs: Callable[[float, float], float],
    t0: float,
    y0: float,
    t_grid: Sequence[float],
    spec: OdeSpec | None = None,
) -> np.ndarray:
    """Solve the scalar IVP ``y' = rhs(t, y), y(t0) = y0`` and return ``y`` on ``t_grid``.

    Uses an embedded 8(5,3) Runge-Kutta pair with dense output.
    """
    spec = spec or OdeSpec()
    grid = np.asarray(t_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValidationError("t_grid must be a non-empty 1-d sequence")
    if np.any(np.diff(grid) < 0) or grid[0] < t0:
        raise ValidationError("t_grid must be ascending and start at or after t0")
    t_end = float(grid[-1])
    if t_end == t0:
        return np.full(grid.shape, float(y0))
    sol = _run_ode(rhs, float(t0), y0, t_end, spec, dense=True)
    out = sol.sol(grid)[0]
    out[grid == t0] = float(y0)
    return out


def ode_trajectory(
    rhs: Callable[[float, float], float],
    t0: float,
    y0: float,
    t_end: float,
    spec: OdeSpec | None = None,
    refine: int = 3,
) -> tuple[np.ndarray, np.ndarray]:
    """Adaptive trajectory: the solver's accepted step times plus ``refine``
    dense-output points inside each step. Returns ``(t_nodes, y_nodes)``."""
    spec = spec or OdeSpec()
    sol = _run_ode(rhs, float(t0), y0, float(t_end), spec, dense=True)
    steps = sol.t
    frac = np.arange(1, refine + 1) / (refine + 1)
    inner = (steps[:-1, None] + np.diff(steps)[:, None] * frac[None, :]).ravel()
    t_nodes = np.sort(np.concatenate([steps, inner]))
    y_nodes = sol.sol(t_nodes)[0]
    y_nodes[0] = float(y0)
    return t_nodes, y_nodes


# --------------------------------------------------------------------------
# Matrix exponentials


def matrix_exp_action(S: np.ndarray, t: float, v: np.ndarray) -> np.ndarray:
    """Row-vector action ``v @ expm(S * t)`` (Pade scaling and squaring)."""
    S = np.asarray(S, dtype=float)
    if t < 0:
        raise ValidationError("t must be non-negative")
    return np.asarray(v, dtype=float) @ scipy.linalg.expm(S * float(t))


def expm_batch(S: np.ndarray, times: np.ndarray, degree: int = 18) -> np.ndarray:
    """``expm(S * t)`` for every ``t`` in ``times``, shape ``(len(times), n, n)``.

    Truncated Taylor series after scaling each ``S * t`` to 1-norm <= 1/2, then
    repeated squaring; all matrices are processed as one stacked array.
    """
    S = np.asarray(S, dtype=float)
    t = np.atleast_1d(np.asarray(times, dtype=float))
    n = S.shape[0]
    norm = np.abs(S).sum(axis=0).max() * np.abs(t)
    with np.errstate(divide="ignore"):
        s = np.ceil(np.log2(np.maximum(norm, _TINY) / 0.5))
    s = np.maximum(s, 0).astype(int)
    X = (t / 2.0**s)[:, None, None] * S
    eye = np.eye(n)
    E = eye + X / degree
    for k in range(degree - 1, 0, -1):
        E = eye + (X @ E) / k
    for j in range(int(s.max(initial=0))):
        m = s > j
        E[m] = E[m] @ E[m]
    return E


# --------------------------------------------------------------------------
# Optimization


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    nfev: int
    nit: int
    restarts: int
    converged: bool
    warning: str | None = None
    history: list[float] = field(default_factory=list)


class _Tracker:
    def __init__(self, objective):
        self.objective = objective
        self.best_x = None
        self.best_f = math.inf
        self.nfev = 0

    def __call__(self, x):
        self.nfev += 1
        f = float(self.objective(np.asarray(x, dtype=float)))
        if math.isnan(f):
            f = math.inf
        if f < self.best_f:
            self.best_f = f
            self.best_x = np.array(x, dtype=float)
        return f


def minimize(
    objective: Callable[[np.ndarray], float],
    x0: Sequence[float],
    spec: OptimizerSpec | None = None,
    *,
    scale: float | Sequence[float] = 0.5,
    polish: bool = False,
) -> OptimizeResult:
    """Multi-start Nelder-Mead minimization.

    Start 0 is ``x0``; start ``r`` is ``x0`` plus a Gaussian perturbation of
    size ``scale`` drawn from an RNG seeded with ``(spec.seed, r)``. Each start
    is restarted from its own optimum until the objective stops improving.
    With ``polish`` the winner is refined by BFGS on central differences.
    The best point evaluated anywhere is returned, so the result never has
    a larger objective than ``x0``.
    """
    spec = spec or OptimizerSpec()
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    tracker = _Tracker(objective)
    f0 = tracker(x0)
    if not math.isfinite(f0):
        raise ValidationError("objective must be finite at the start point")
    scale = np.broadcast_to(np.asarray(scale, dtype=float), x0.shape)
    dim = x0.size
    nit = 0
    converged = False
    history = []
    for r in range(spec.restarts):
        if r == 0:
            start = x0
        else:
            rng = np.random.default_rng([spec.seed, r])
            start = x0 + scale * rng.standard_normal(dim)
        budget = spec.max_iterations
        prev = math.inf
        x = start
        for _ in range(10):
            res = scipy.optimize.minimize(
                tracker, x, method="Nelder-Mead",
                options=dict(maxiter=budget, maxfev=4 * budget, xatol=spec.tol,
                             fatol=spec.tol, adaptive=dim > 2),
            )
            nit += int(res.nit)
            budget -= int(res.nit)
            x = res.x
            if res.fun >= prev - spec.tol * max(1.0, abs(prev)) or budget <= 0:
                converged = converged or bool(res.success)
                break
            prev = res.fun
        history.append(float(tracker.best_f))
    if polish and tracker.best_x is not None:
        try:
            scipy.optimize.minimize(tracker, tracker.best_x, method="BFGS",
                                    jac="3-point", options=dict(maxiter=200, gtol=1e-8))
        except (ArithmeticError, ValueError) as exc:
            log.debug("polish step failed: %s", exc)
    warning = None
    if not tracker.best_f < f0:
        warning = "no restart improved on the start point"
        log.warning(warning)
        return OptimizeResult(x0.copy(), f0, tracker.nfev, nit, spec.restarts,
                              converged, warning, history)
    return OptimizeResult(tracker.best_x, tracker.best_f, tracker.nfev, nit,
                          spec.restarts, converged, warning, history)
