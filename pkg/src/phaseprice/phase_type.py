"""Coxian phase-type distributions.

A Coxian chain starts in phase ``i`` with probability ``alpha[i]``, leaves
phase ``i`` for ``i + 1`` at rate ``lam[i]`` and is absorbed at rate ``c[i]``.
Phases are numbered from 1 in user-facing output (paths, reports) and from 0
in arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import ValidationError
from .numerics import expm_batch

# eigen-decomposition path is used only when cond(V) stays below this
_MAX_EIGEN_COND = 1e4


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float).ravel()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class CphParams:
    alpha: np.ndarray
    lam: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        alpha, lam, c = _frozen(self.alpha), _frozen(self.lam), _frozen(self.c)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "c", c)
        n = alpha.size
        if n < 1:
            raise ValidationError("alpha: need at least one phase")
        if c.size != n:
            raise ValidationError(f"c: expected {n} rates, got {c.size}")
        if lam.size != n - 1:
            raise ValidationError(f"lambda: expected {n - 1} rates, got {lam.size}")
        for name, arr in (("alpha", alpha), ("lambda", lam), ("c", c)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name}: entries must be finite")
        if np.any(alpha < 0):
            raise ValidationError("alpha: entries must be non-negative")
        if abs(alpha.sum() - 1.0) > 1e-12:
            raise ValidationError(f"alpha: entries must sum to 1 (sum={alpha.sum()!r})")
        if np.any(lam <= 0):
            raise ValidationError("lambda: rates must be positive")
        if np.any(c <= 0):
            raise ValidationError("c: rates must be positive")

    @property
    def n(self) -> int:
        return self.alpha.size

    def __eq__(self, other):
        if not isinstance(other, CphParams):
            return NotImplemented
        return (np.array_equal(self.alpha, other.alpha)
                and np.array_equal(self.lam, other.lam)
                and np.array_equal(self.c, other.c))

    def __hash__(self):
        return hash((self.alpha.tobytes(), self.lam.tobytes(), self.c.tobytes()))

    def to_dict(self) -> dict[str, Any]:
        return {"alpha": self.alpha.tolist(), "lambda": self.lam.tolist(), "c": self.c.tolist()}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> CphParams:
        for key in ("alpha", "lambda", "c"):
            if key not in d:
                raise ValidationError(f"{key}: missing field")
        return cls(d["alpha"], d["lambda"], d["c"])


@dataclass(frozen=True, eq=False)
class SubGenerator:
    S: np.ndarray
    exit: np.ndarray

    def full(self) -> np.ndarray:
        """The (n+1)-state generator with the absorbing state last."""
        n = self.S.shape[0]
        A = np.zeros((n + 1, n + 1))
        A[:n, :n] = self.S
        A[:n, n] = self.exit
        return A


def build_generator(p: CphParams) -> SubGenerator:
    n = p.n
    lam_full = np.append(p.lam, 0.0)
    S = np.diag(-(p.c + lam_full))
    if n > 1:
        S[np.arange(n - 1), np.arange(1, n)] = p.lam
    S.setflags(write=False)
    return SubGenerator(S, p.c.copy())


def _eigen_parts(p: CphParams):
    """Right eigenvectors of the bidiagonal sub-generator, or None when the
    decomposition is too ill-conditioned to trust."""
    d = -(p.c + np.append(p.lam, 0.0))
    n = p.n
    V = np.eye(n)
    for j in range(n):
        for k in range(j - 1, -1, -1):
            gap = d[j] - d[k]
            if gap == 0.0:
                return None
            V[k, j] = p.lam[k] * V[k + 1, j] / gap
    W = scipy.linalg.solve_triangular(V, np.eye(n))
    cond = np.abs(V).sum(axis=1).max() * np.abs(W).sum(axis=1).max()
    if not np.isfinite(cond) or cond > _MAX_EIGEN_COND:
        return None
    return d, V, W


def row_action(p: CphParams, t) -> np.ndarray:
    """``alpha @ expm(S t)`` for each entry of ``t``; shape ``t.shape + (n,)``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValidationError("t must be non-negative")
    flat = t.ravel()
    parts = _eigen_parts(p)
    if parts is not None:
        d, V, W = parts
        coef = p.alpha @ V
        out = (np.exp(np.outer(flat, d)) * coef) @ W
    else:
        E = expm_batch(build_generator(p).S, flat)
        out = np.einsum("i,kij->kj", p.alpha, E)
    out = np.clip(out, 0.0, 1.0)
    return out.reshape(t.shape + (p.n,))


def _scalar_or_array(x, like):
    return float(x) if np.ndim(like) == 0 else x


def cph_pdf(p: CphParams, t):
    """Absorption-time density ``alpha expm(S t) c``."""
    val = row_action(p, t) @ p.c
    return _scalar_or_array(val, t)


def cph_survival(p: CphParams, t):
    val = row_action(p, t).sum(axis=-1)
    return _scalar_or_array(np.clip(val, 0.0, 1.0), t)


def cph_cdf(p: CphParams, t):
    val = 1.0 - row_action(p, t).sum(axis=-1)
    return _scalar_or_array(np.clip(val, 0.0, 1.0), t)


def phase_occupancy(p: CphParams, t) -> np.ndarray:
    """Probability of being in each transient phase at ``t``, then absorbed.

    Shape ``(n + 1,)`` for scalar ``t``, ``t.shape + (n + 1,)`` otherwise.
    """
    pi = np.clip(row_action(p, t), 0.0, 1.0)
    absorbed = np.clip(1.0 - pi.sum(axis=-1, keepdims=True), 0.0, 1.0)
    return np.concatenate([pi, absorbed], axis=-1)


def cph_quantile(p: CphParams, q: float) -> float:
    """Smallest ``t`` with ``cdf(t) >= q``, solved on the log-survival scale."""
    if not 0.0 <= q < 1.0:
        raise ValidationError("q must lie in [0, 1)")
    if q == 0.0:
        return 0.0
    target = math.log1p(-q)

    def g(t):
        return math.log(max(cph_survival(p, t), 1e-300)) - target

    hi = 1.0 / p.c.max()
    while g(hi) > 0:
        hi *= 2.0
    return scipy.optimize.brentq(g, 0.0, hi, xtol=1e-12, rtol=1e-12)


def cph_mean(p: CphParams) -> float:
    S = build_generator(p).S
    return float(-p.alpha @ np.linalg.solve(S, np.ones(p.n)))


def cph_sample(p: CphParams, rng: np.random.Generator) -> tuple[float, list[tuple[int, float]]]:
    """One exact draw: absorption time and the visited phases with entry times."""
    phase = int(rng.choice(p.n, p=p.alpha))
    t = 0.0
    path = [(phase + 1, 0.0)]
    while True:
        forward = p.lam[phase] if phase < p.n - 1 else 0.0
        rate = p.c[phase] + forward
        t += rng.exponential(1.0 / rate)
        if rng.random() * rate < forward:
            phase += 1
            path.append((phase + 1, t))
        else:
            return t, path


def sample_absorption_times(p: CphParams, size: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorized equivalent of drawing ``size`` times with :func:`cph_sample`."""
    phase = rng.choice(p.n, size=size, p=p.alpha)
    t = np.zeros(size)
    alive = np.ones(size, dtype=bool)
    forward = np.append(p.lam, 0.0)
    rate = p.c + forward
    while alive.any():
        idx = np.flatnonzero(alive)
        ph = phase[idx]
        t[idx] += rng.exponential(1.0 / rate[ph])
        move = rng.random(idx.size) * rate[ph] < forward[ph]
        phase[idx[move]] += 1
        alive[idx[~move]] = False
    return t
