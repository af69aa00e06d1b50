"""Two-stage maximum likelihood.

Stage 1 fits the Coxian parameters to the LOS column alone. Stage 2 freezes
them, builds the partition curves once and fits the admission log-normal to
the (charge, LOS) pairs. Because the curves are invariant in label
coordinates, a single construction serves every ``(mu, sigma)`` candidate.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .converter import FittedModel, construct_rho, default_horizon
from .errors import EstimationError, HorizonError, NumericalError, ValidationError
from .numerics import OdeSpec, OptimizeResult, OptimizerSpec, QuadratureSpec, minimize
from .phase_type import CphParams, row_action
from .rgrst import LognormalParams

log = logging.getLogger(__name__)

# ridge weight pulling stage-1 coordinates toward the start
DEFAULT_SHRINKAGE = 0.5


@dataclass(frozen=True)
class Stage1Result:
    params: CphParams
    loglik: float
    diagnostics: OptimizeResult


@dataclass(frozen=True)
class Stage2Result:
    lognormal: LognormalParams
    loglik: float
    diagnostics: OptimizeResult
    model: FittedModel


# --------------------------------------------------------------------------
# Reparametrization


def to_unconstrained(p: CphParams) -> np.ndarray:
    """``[log(alpha_k / alpha_1) for k >= 2, log lambda, log c]``."""
    if np.any(p.alpha <= 0):
        raise ValidationError("alpha: every entry must be positive to reparametrize")
    logits = np.log(p.alpha[1:]) - math.log(p.alpha[0])
    return np.concatenate([logits, np.log(p.lam), np.log(p.c)])


def from_unconstrained(theta, n: int) -> CphParams:
    theta = np.asarray(theta, dtype=float)
    if theta.size != 3 * n - 2:
        raise ValidationError(f"expected {3 * n - 2} coordinates for n={n}, got {theta.size}")
    logits = np.concatenate([[0.0], theta[: n - 1]])
    alpha = np.exp(logits - logsumexp(logits))
    alpha /= alpha.sum()
    lam = np.exp(theta[n - 1: 2 * n - 2])
    c = np.exp(theta[2 * n - 2:])
    return CphParams(alpha, lam, c)


# --------------------------------------------------------------------------
# Stage 1


def los_loglik(p: CphParams, los) -> float:
    dens = row_action(p, np.asarray(los, dtype=float)) @ p.c
    if np.any(~(dens > 0)):
        return -math.inf
    return float(np.sum(np.log(dens)))


def moment_start(los, n: int) -> CphParams:
    rate = n / float(np.mean(los))
    return CphParams(np.full(n, 1.0 / n), np.full(n - 1, rate), np.full(n, rate))


def jitter_los(los, rng: np.random.Generator) -> np.ndarray:
    """Spread whole-day LOS values uniformly over the following day."""
    los = np.asarray(los, dtype=float)
    whole = los == np.round(los)
    return np.where(whole, los + rng.random(los.size), los)


def _check_los(los, n: int) -> np.ndarray:
    los = np.asarray(los, dtype=float).ravel()
    if n < 1:
        raise ValidationError("phase count n must be >= 1")
    if np.any(~np.isfinite(los)) or np.any(los <= 0):
        raise ValidationError("LOS values must be finite and positive")
    floor = 10 * (3 * n - 1)
    if los.size < floor:
        raise ValidationError(f"need at least {floor} observations for n={n}, got {los.size}")
    return los


def stage1_fit(
    los,
    n: int,
    spec: OptimizerSpec | None = None,
    start: CphParams | None = None,
    shrinkage: float = DEFAULT_SHRINKAGE,
) -> Stage1Result:
    """Maximize the Coxian log-likelihood of the LOS sample.

    A Coxian law has many representations with the same likelihood, and
    some of them (a rate near zero behind a very fast transition) make the
    joint stage degenerate. A small ridge penalty ``shrinkage * |theta -
    theta_start|^2`` selects a representation near the start. The returned
    log-likelihood is the unpenalized one.
    """
    los = _check_los(los, n)
    spec = spec or OptimizerSpec()
    if not shrinkage >= 0:
        raise ValidationError("shrinkage must be non-negative")
    p0 = start or moment_start(los, n)
    theta0 = to_unconstrained(p0)

    def objective(theta):
        try:
            p = from_unconstrained(theta, n)
        except ValidationError:
            return math.inf
        return -los_loglik(p, los) + shrinkage * float(np.sum((theta - theta0) ** 2))

    res = minimize(objective, theta0, spec, polish=True)
    if not math.isfinite(res.fun):
        raise EstimationError("every restart diverged", 1, res)
    if res.warning:
        log.warning("stage 1: no restart improved on the start")
    p = from_unconstrained(res.x, n)
    return Stage1Result(p, los_loglik(p, los), res)


# --------------------------------------------------------------------------
# Stage 2


def _check_pairs(data) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValidationError("data must be (charge, los) pairs")
    charge, los = arr[:, 0], arr[:, 1]
    bad = np.flatnonzero(~(charge > 0) | ~(los > 0) | ~np.isfinite(charge) | ~np.isfinite(los))
    if bad.size:
        raise ValidationError(f"record {int(bad[0])}: charge and LOS must be positive")
    return charge, los


def joint_loglik(m: FittedModel, charge, los) -> float:
    val = m.log_joint_pdf(charge, los)
    total = float(np.sum(val))
    return total if math.isfinite(total) else -math.inf


def stage2_fit(
    data,
    s1: Stage1Result,
    spec: OptimizerSpec | None = None,
    *,
    horizon: float | None = None,
    ode_spec: OdeSpec | None = None,
    quad_spec: QuadratureSpec | None = None,
) -> Stage2Result:
    """Fit ``(mu, sigma)`` with the Coxian part frozen at ``s1``.

    The default horizon is the larger of the model quantile horizon and the
    longest observed stay, so the training sample always lies inside it.
    """
    charge, los = _check_pairs(data)
    spec = spec or OptimizerSpec()
    p = s1.params
    if horizon is None:
        horizon = max(default_horizon(p), float(los.max()))
    late = np.flatnonzero(los > horizon)
    if late.size:
        k = int(late[0])
        raise HorizonError(k, float(los[k]), float(horizon))
    try:
        base = construct_rho(p, LognormalParams(0.0, 1.0), horizon, ode_spec, quad_spec)
    except NumericalError as exc:
        raise EstimationError(str(exc), 2) from exc

    naive = naive_lognormal(charge, los)
    x0 = np.array([naive.mu, math.log(naive.sigma)])

    def objective(x):
        mu, log_sigma = x
        if not (math.isfinite(mu) and abs(log_sigma) < 50):
            return math.inf
        m = base.with_lognormal(LognormalParams(float(mu), math.exp(log_sigma)))
        return -joint_loglik(m, charge, los)

    res = minimize(objective, x0, spec)
    if not math.isfinite(res.fun):
        raise EstimationError("every restart diverged", 2, res)
    lp = LognormalParams(float(res.x[0]), math.exp(float(res.x[1])))
    return Stage2Result(lp, -res.fun, res, base.with_lognormal(lp))


def two_stage_fit(
    data,
    n: int,
    spec: OptimizerSpec | None = None,
    *,
    horizon: float | None = None,
    ode_spec: OdeSpec | None = None,
    quad_spec: QuadratureSpec | None = None,
    shrinkage: float = DEFAULT_SHRINKAGE,
) -> tuple[Stage1Result, Stage2Result]:
    """Stage 1 on the LOS column, then stage 2 on the pairs.

    The final model is ``stage2.model``.
    """
    charge, los = _check_pairs(data)
    s1 = stage1_fit(los, n, spec, shrinkage=shrinkage)
    s2 = stage2_fit(np.column_stack([charge, los]), s1, spec, horizon=horizon,
                    ode_spec=ode_spec, quad_spec=quad_spec)
    return s1, s2


def naive_lognormal(charge, los) -> LognormalParams:
    """Normal MLE of ``ln y - t``: the admission log-charge."""
    w = np.log(np.asarray(charge, dtype=float)) - np.asarray(los, dtype=float)
    return LognormalParams(float(w.mean()), float(w.std()))

