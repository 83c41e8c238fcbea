"""Severity of parallel-trends violations and the bias constants built on it."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import SeverityParams, TimeLayout, ViolationMode


@dataclass(frozen=True)
class SeverityReport:
    s_value: float
    p: float
    count: int
    mode: ViolationMode = ViolationMode.ITERATIVE


def conjugate(p: float) -> float:
    """Hölder conjugate ``q`` with ``1/p + 1/q = 1``."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if p == 1:
        return math.inf
    if math.isinf(p):
        return 1.0
    return p / (p - 1.0)


def power_mean(values, p: float, axis: int = -1):
    """``((1/m) * sum |v|^p)^(1/p)`` along ``axis``; the max of ``|v|`` when ``p`` is infinite.

    Inputs are rescaled by their largest magnitude before powering, so large
    ``p`` does not overflow.
    """
    a = np.abs(np.asarray(values, dtype=float))
    m = a.shape[axis]
    if m == 0:
        raise ValueError("severity of an empty vector is undefined")
    peak = np.max(a, axis=axis, keepdims=True)
    if math.isinf(p):
        return np.squeeze(peak, axis=axis)
    if p == 1:
        return np.mean(a, axis=axis)
    safe = np.where(peak > 0, peak, 1.0)
    out = np.squeeze(safe, axis=axis) * np.mean((a / safe) ** p, axis=axis) ** (1.0 / p)
    return np.where(np.squeeze(peak, axis=axis) > 0, out, 0.0)


def severity(values, p: float) -> float:
    """Normalized ``p``-aggregate of absolute violations.

    >>> round(severity([3, 4], 2), 7)
    3.5355339
    >>> severity([1, -2], float("inf"))
    2.0
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("severity of an empty vector is undefined")
    if not np.all(np.isfinite(v)):
        raise ValueError("violations must be finite")
    return float(power_mean(v, p))


def severity_report(values, params: SeverityParams) -> SeverityReport:
    v = np.asarray(values, dtype=float).ravel()
    return SeverityReport(severity(v, params.p), params.p, int(v.size), params.mode)


def _weighted_power_sum(weights, q: float) -> float:
    """``(sum |w|^q)^(1/q)``; the max of ``|w|`` for ``q = inf``."""
    w = np.abs(np.asarray(weights, dtype=float))
    if w.size == 0:
        return 0.0
    if math.isinf(q):
        return float(np.max(w))
    peak = float(np.max(w))
    if peak == 0:
        return 0.0
    return peak * float(np.sum((w / peak) ** q)) ** (1.0 / q)


def kappa(t_post: int, p: float) -> float:
    """Bias constant for the uniform post-period average.

    Equals ``((1/T_post) * sum_{t=1}^{T_post} t^q)^(1/q)`` with ``q`` conjugate to ``p``.
    """
    if t_post < 1:
        raise ValueError("t_post must be >= 1")
    q = conjugate(p)
    if math.isinf(q):
        return float(t_post)
    if q == 1:
        return (t_post + 1) / 2.0
    t = np.arange(1, t_post + 1, dtype=float)
    return t_post * float(np.mean((t / t_post) ** q)) ** (1.0 / q)


def tail_sums(weights) -> np.ndarray:
    """``W_s = sum_{t >= s} c_t``: the weight each post-period iterative violation carries."""
    c = np.asarray(weights, dtype=float)
    return np.cumsum(c[::-1])[::-1]


def kappa_lin(weights, p: float) -> float:
    """Bias constant for a weighted post-period estimand ``sum_t c_t ATT_t``.

    The weighted gap is ``sum_s W_s r_s`` with ``W_s`` the tail sums of ``c``, so
    Hölder's inequality gives ``T_post^(1/p) * ||W||_q`` as the sharp constant.
    For uniform weights this reduces to :func:`kappa`.
    """
    c = np.asarray(weights, dtype=float).ravel()
    if c.size == 0:
        raise ValueError("weights must be non-empty")
    if not np.all(np.isfinite(c)):
        raise ValueError("weights must be finite")
    q = conjugate(p)
    scale = 1.0 if math.isinf(p) else c.size ** (1.0 / p)
    return scale * _weighted_power_sum(tail_sums(c), q)


def kappa_overall_lin(weights, p: float) -> float:
    """Bias constant for a weighted estimand under overall-violation extrapolation."""
    c = np.asarray(weights, dtype=float).ravel()
    q = conjugate(p)
    scale = 1.0 if math.isinf(p) else c.size ** (1.0 / p)
    return scale * _weighted_power_sum(c, q)


def bias_coefficient(layout: TimeLayout, params: SeverityParams, weights=None) -> float:
    """Multiplier turning pre-period severity into a bound on ``|tau_ATT - tau_DD|``."""
    if weights is None:
        if params.mode is ViolationMode.OVERALL:
            return 1.0
        return kappa(layout.t_post, params.p)
    weights = np.asarray(weights, dtype=float).ravel()
    if weights.size != layout.t_post:
        raise ValueError(f"estimand weights must have length T_post={layout.t_post}")
    if params.mode is ViolationMode.OVERALL:
        return kappa_overall_lin(weights, params.p)
    return kappa_lin(weights, params.p)


def bias_bound(
    s_pre: float,
    layout: TimeLayout,
    params: SeverityParams,
    weights: Optional[np.ndarray] = None,
) -> float:
    if s_pre < 0:
        raise ValueError("s_pre must be nonnegative")
    return bias_coefficient(layout, params, weights) * float(s_pre)


def induced_gap(post_violations, weights=None) -> float:
    """``|tau_ATT - tau_DD|`` implied by post-period iterative violations.

    The DID for period ``t`` absorbs the overall violation accumulated since the
    reference period, ``sum_{s=t0}^{t} r_s``.
    """
    r = np.asarray(post_violations, dtype=float)
    cumulative = np.cumsum(r)
    if weights is None:
        return float(abs(np.mean(cumulative)))
    return float(abs(np.dot(np.asarray(weights, dtype=float), cumulative)))


def worst_case_post_violations(layout: TimeLayout, p: float, target_severity: float) -> np.ndarray:
    """Post-period iterative violations with severity ``S`` attaining ``kappa * S``.

    Hölder's inequality is tight when ``|r_t|^p`` is proportional to ``w_t^q``
    where ``w_t = T_post - t + 1``. For ``p = 1`` all mass sits on the first
    post period; for ``p = inf`` the violations are constant.
    """
    if not target_severity > 0:
        raise ValueError("target_severity must be positive")
    n = layout.t_post
    w = np.arange(n, 0, -1, dtype=float)
    q = conjugate(p)
    if math.isinf(q):
        r = np.zeros(n)
        r[0] = 1.0
    elif q == 1:
        r = np.ones(n)
    else:
        # |r| ∝ w^(q/p) = w^(q-1)
        r = (w / n) ** (q - 1.0)
    return r * (target_severity / severity(r, p))
