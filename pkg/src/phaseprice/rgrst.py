"""Charge-growth primitives: log-normal admission charge, the linear growth
rate ``q(y, t) = y`` and the characteristic flow it induces."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ValidationError

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class LognormalParams:
    mu: float
    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma)):
            raise ValidationError("mu/sigma must be finite")
        if self.sigma <= 0:
            raise ValidationError("sigma: must be positive")

    def to_dict(self) -> dict[str, float]:
        return {"mu": float(self.mu), "sigma": float(self.sigma)}

    @classmethod
    def from_dict(cls, d) -> LognormalParams:
        for key in ("mu", "sigma"):
            if key not in d:
                raise ValidationError(f"{key}: missing field")
        return cls(float(d["mu"]), float(d["sigma"]))

    def mean(self) -> float:
        return math.exp(self.mu + 0.5 * self.sigma**2)


@dataclass(frozen=True)
class GrowthModel:
    """Deterministic growth ``dy/dt = y`` started from a log-normal charge."""

    initial: LognormalParams

    def rate(self, y, t):
        return np.asarray(y, dtype=float) if np.ndim(y) else float(y)


def _positive(y):
    y = np.asarray(y, dtype=float)
    if np.any(~(y > 0)):
        raise DomainError("charge must be positive")
    return y


def log_initial_pdf(lp: LognormalParams, y):
    y = _positive(y)
    z = (np.log(y) - lp.mu) / lp.sigma
    return -0.5 * z * z - _LOG_SQRT_2PI - math.log(lp.sigma) - np.log(y)


def initial_pdf(lp: LognormalParams, y):
    out = np.exp(log_initial_pdf(lp, y))
    return float(out) if np.ndim(out) == 0 else out


def potential_pdf(gm: GrowthModel, y, t):
    """Density of the no-discharge charge at time ``t``: the admission
    density pushed forward by ``y -> y * exp(t)``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("t must be non-negative")
    y = _positive(y)
    out = initial_pdf(gm.initial, y * np.exp(-t)) * np.exp(-t)
    return float(out) if np.ndim(out) == 0 else out


def flow(gm: GrowthModel, y, t, s):
    """Backward characteristic: the charge ``s`` time units before ``(y, t)``."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < 0) or np.any(s > t):
        raise DomainError("lookback s must satisfy 0 <= s <= t")
    out = np.asarray(y, dtype=float) * np.exp(-s)
    return float(out) if np.ndim(out) == 0 else out


def flow_inverse(gm: GrowthModel, x, s):
    """Forward characteristic: the charge reached from ``x`` after time ``s``."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise DomainError("elapsed time must be non-negative")
    out = _positive(x) * np.exp(s)
    return float(out) if np.ndim(out) == 0 else out
