"""Conditionally valid confidence intervals for the average post-treatment ATT.

The interval is ``tau_DD_hat +/- (bias + noise)`` where ``bias`` is the bias
coefficient times the estimated pre-period severity and ``noise`` is the
``(1 - alpha)`` quantile of ``psi(Z)`` with ``Z ~ N(0, Sigma_hat)``. Because the
stored covariance is the finite-sample covariance of the estimator vector and
``psi`` is positively homogeneous of degree one, the quantile already carries the
``1/sqrt(n)`` scaling.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Optional

import numpy as np

from .core import PSD_REL_TOL, SeverityParams, ThetaEstimate, TimeLayout, ViolationMode
from .pretest import PretestResult, align_mode, decide
from .severity import bias_coefficient, power_mean, severity

DRAW_BLOCK = 1024


@dataclass(frozen=True)
class InferenceParams:
    severity: SeverityParams
    alpha: float = 0.05
    mc_draws: int = 5000
    seed: int = 0
    estimand_weights: Optional[tuple] = None
    threads: Optional[int] = None

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.mc_draws < 1000:
            raise ValueError("mc_draws must be at least 1000")
        if self.mc_draws < 5000:
            warnings.warn(f"mc_draws={self.mc_draws} is below the recommended 5000", stacklevel=3)
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.estimand_weights is not None:
            object.__setattr__(
                self, "estimand_weights", tuple(float(c) for c in self.estimand_weights)
            )


@dataclass(frozen=True)
class IntervalReport:
    point: float
    half_width: float
    lower: float
    upper: float
    bias_component: float
    noise_component: float
    critical_value: float
    bias_coefficient: float
    conventional_lower: float
    conventional_upper: float
    conventional_se: float
    pretest: PretestResult
    alpha: float
    mode: ViolationMode = ViolationMode.ITERATIVE
    estimand_weights: Optional[tuple] = field(default=None)

    @property
    def conditionally_valid(self) -> bool:
        """Validity claims attach only when the pretest passed."""
        return self.pretest.phi == 0

    def covers(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    def conventional_covers(self, value: float) -> bool:
        return self.conventional_lower <= value <= self.conventional_upper


def _post_weights(layout: TimeLayout, weights) -> np.ndarray:
    if weights is None:
        return np.full(layout.t_post, 1.0 / layout.t_post)
    c = np.asarray(weights, dtype=float).ravel()
    if c.size != layout.t_post:
        raise ValueError(f"estimand weights must have length T_post={layout.t_post}, got {c.size}")
    return c


def psi_batch(X, layout: TimeLayout, params: SeverityParams, weights=None) -> np.ndarray:
    """Row-wise ``psi`` for an ``(S, T-1)`` array."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    pre, post = layout.split(X)
    c = _post_weights(layout, weights)
    coef = bias_coefficient(layout, params, weights)
    return np.abs(post @ c) + coef * power_mean(pre, params.p, axis=1)


def psi_statistic(x, layout: TimeLayout, params: SeverityParams, weights=None) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (layout.theta_length(),):
        raise ValueError(f"x must have length {layout.theta_length()}, got shape {x.shape}")
    return float(psi_batch(x[None, :], layout, params, weights)[0])


def sampling_factor(Sigma) -> np.ndarray:
    """Matrix ``F`` with ``F F' = Sigma`` from a symmetric eigendecomposition.

    Eigenvalues in ``[-1e-8 * lambda_max, 0)`` are clamped to zero; anything more
    negative is rejected.
    """
    Sigma = np.asarray(Sigma, dtype=float)
    lam, V = np.linalg.eigh(0.5 * (Sigma + Sigma.T))
    lam_max = max(float(lam[-1]), 0.0)
    if lam[0] < -PSD_REL_TOL * lam_max:
        raise ValueError(
            f"covariance is not positive semi-definite (eigenvalue {lam[0]:.3g} "
            f"vs largest {lam_max:.3g})"
        )
    return V * np.sqrt(np.clip(lam, 0.0, None))


def standard_normal_draws(seed: int, n_draws: int, dim: int, threads: Optional[int] = None) -> np.ndarray:
    """``(n_draws, dim)`` standard normals in fixed blocks seeded by ``(seed, block)``."""
    starts = range(0, n_draws, DRAW_BLOCK)

    def block(start):
        rng = np.random.default_rng([int(seed), start // DRAW_BLOCK])
        return rng.standard_normal((min(DRAW_BLOCK, n_draws - start), dim))

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(block, starts))
    else:
        parts = [block(s) for s in starts]
    return np.vstack(parts)


def upper_quantile(sample, alpha: float) -> float:
    """Order statistic ``ceil((1 - alpha) * S)`` (1-based) of ``sample``."""
    s = np.sort(np.asarray(sample, dtype=float))
    k = math.ceil(round((1.0 - alpha) * s.size, 9))
    return float(s[max(k, 1) - 1])


def critical_value(
    alpha: float,
    Sigma,
    layout: TimeLayout,
    params: SeverityParams,
    seed: int = 0,
    n_draws: int = 5000,
    weights=None,
    threads: Optional[int] = None,
) -> float:
    """Monte-Carlo ``(1 - alpha)`` quantile of ``psi(Z)``, ``Z ~ N(0, Sigma)``.

    ``Sigma`` is normalized by its largest diagonal entry before factorization and
    the quantile rescaled afterwards, so ``critical_value(4 * Sigma)`` is exactly
    twice ``critical_value(Sigma)`` under the same seed.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    Sigma = np.asarray(Sigma, dtype=float)
    dim = layout.theta_length()
    if Sigma.shape != (dim, dim):
        raise ValueError(f"Sigma must be {dim}x{dim}, got {Sigma.shape}")
    if not np.all(np.isfinite(Sigma)):
        raise ValueError("Sigma contains non-finite entries")
    if not np.allclose(Sigma, Sigma.T, rtol=0.0, atol=1e-10 * max(1.0, float(np.abs(Sigma).max()))):
        raise ValueError("Sigma is not symmetric")
    scale = float(np.max(np.diag(Sigma)))
    if scale <= 0:
        sampling_factor(Sigma)
        return 0.0
    F = sampling_factor(Sigma / scale)
    G = standard_normal_draws(seed, n_draws, dim, threads)
    stats = psi_batch(G @ F.T, layout, params, weights)
    return math.sqrt(scale) * upper_quantile(stats, alpha)


def confidence_interval(est: ThetaEstimate, params: InferenceParams) -> IntervalReport:
    """Interval for the (weighted) average post-treatment ATT with the pretest embedded.

    The interval is always computed; :attr:`IntervalReport.conditionally_valid` is
    False when the pretest rejects the extrapolation condition.
    """
    if est.covariance is None:
        raise ValueError(
            "the estimate carries no covariance; compute one with estimate_covariance_bootstrap"
        )
    sev = params.severity
    est = align_mode(est, sev.mode)
    layout = est.layout
    weights = params.estimand_weights
    c = _post_weights(layout, weights)

    s_pre_hat = severity(est.pre, sev.p)
    pretest = decide(s_pre_hat, sev)
    coef = bias_coefficient(layout, sev, weights)
    bias = coef * s_pre_hat
    crit = critical_value(
        params.alpha, est.covariance, layout, sev, params.seed, params.mc_draws, weights, params.threads
    )
    point = float(est.post @ c)
    half = bias + crit

    k = layout.n_pre_terms
    post_cov = est.covariance[k:, k:]
    se = math.sqrt(max(float(c @ post_cov @ c), 0.0))
    z = NormalDist().inv_cdf(1.0 - params.alpha / 2.0)
    return IntervalReport(
        point=point,
        half_width=half,
        lower=point - half,
        upper=point + half,
        bias_component=bias,
        noise_component=crit,
        critical_value=crit,
        bias_coefficient=coef,
        conventional_lower=point - z * se,
        conventional_upper=point + z * se,
        conventional_se=se,
        pretest=pretest,
        alpha=params.alpha,
        mode=sev.mode,
        estimand_weights=weights,
    )
