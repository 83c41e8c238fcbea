"""Domain types and time-index conventions shared across didguard.

Periods are indexed ``1..T``. The treatment starts at ``t0`` and the last
pre-treatment period ``t0 - 1`` is the reference period for every
difference-in-differences quantity. The estimator vector has length ``T - 1``:

* pre-block: iterative violations ``r_2 .. r_{t0-1}``
* post-block: DID effects ``dd_{t0} .. dd_T``
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

SYMMETRY_TOL = 1e-10
PSD_REL_TOL = 1e-8


class ViolationMode(str, enum.Enum):
    """Which notion of parallel-trends violation the severity is measured on."""

    ITERATIVE = "iterative"
    OVERALL = "overall"


@dataclass(frozen=True)
class TimeLayout:
    """Period count ``T`` and first treated period ``t0``."""

    total_periods: int
    treatment_time: int

    def __post_init__(self):
        T, t0 = self.total_periods, self.treatment_time
        if int(T) != T or int(t0) != t0:
            raise ValueError("total_periods and treatment_time must be integers")
        if not 3 <= t0 <= T:
            raise ValueError(
                f"treatment_time must lie in [3, T={T}] (need at least two "
                f"pre-treatment periods and one post-treatment period), got {t0}"
            )

    @classmethod
    def from_lengths(cls, t_pre: int, t_post: int) -> "TimeLayout":
        return cls(total_periods=t_pre + t_post, treatment_time=t_pre + 1)

    @property
    def t_pre(self) -> int:
        return self.treatment_time - 1

    @property
    def t_post(self) -> int:
        return self.total_periods - self.t_pre

    @property
    def n_pre_terms(self) -> int:
        """Number of iterative violations observable before treatment."""
        return self.t_pre - 1

    def theta_length(self) -> int:
        return self.n_pre_terms + self.t_post

    def split(self, x):
        """Split a length ``T - 1`` vector (or trailing axis) into pre and post blocks."""
        x = np.asarray(x)
        if x.shape[-1] != self.theta_length():
            raise ValueError(
                f"expected trailing dimension {self.theta_length()}, got {x.shape[-1]}"
            )
        k = self.n_pre_terms
        return x[..., :k], x[..., k:]


@dataclass(frozen=True)
class SeverityParams:
    """Norm order ``p`` (``math.inf`` allowed), threshold ``M`` and violation mode."""

    p: float = 2.0
    threshold_M: float = 0.0
    mode: ViolationMode = ViolationMode.ITERATIVE

    def __post_init__(self):
        if not self.p >= 1:
            raise ValueError(f"p must be >= 1, got {self.p}")
        if not self.threshold_M >= 0 or math.isnan(self.threshold_M):
            raise ValueError(f"threshold_M must be >= 0, got {self.threshold_M}")
        object.__setattr__(self, "mode", ViolationMode(self.mode))


def check_covariance(cov, dim: int) -> np.ndarray:
    """Validate symmetry and approximate positive semi-definiteness."""
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (dim, dim):
        raise ValueError(f"covariance must be {dim}x{dim}, got {cov.shape}")
    if not np.all(np.isfinite(cov)):
        raise ValueError("covariance contains non-finite entries")
    scale = max(1.0, float(np.max(np.abs(cov)))) if cov.size else 1.0
    if not np.allclose(cov, cov.T, rtol=0.0, atol=SYMMETRY_TOL * scale):
        raise ValueError("covariance is not symmetric")
    if dim:
        eig = np.linalg.eigvalsh(cov)
        lam_max = max(float(eig[-1]), 0.0)
        if eig[0] < -PSD_REL_TOL * lam_max:
            raise ValueError(
                f"covariance is not positive semi-definite (smallest eigenvalue "
                f"{eig[0]:.3g}, largest {lam_max:.3g})"
            )
    return cov


@dataclass(frozen=True)
class ThetaEstimate:
    """Estimated violation/DID vector with its finite-sample covariance.

    ``covariance`` is the covariance of the estimator vector itself (not of its
    root-n scaled error), or ``None`` when the estimator does not provide one.
    """

    layout: TimeLayout
    values: np.ndarray
    covariance: Optional[np.ndarray] = None
    effective_n: int = 1
    mode: ViolationMode = ViolationMode.ITERATIVE
    cell_counts: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).copy()
        dim = self.layout.theta_length()
        if values.shape != (dim,):
            raise ValueError(f"values must have length {dim}, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("values contain non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.covariance is not None:
            cov = check_covariance(self.covariance, dim).copy()
            cov.setflags(write=False)
            object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "mode", ViolationMode(self.mode))

    @property
    def pre(self) -> np.ndarray:
        return self.layout.split(self.values)[0]

    @property
    def post(self) -> np.ndarray:
        return self.layout.split(self.values)[1]

    def with_covariance(self, covariance) -> "ThetaEstimate":
        return ThetaEstimate(
            self.layout, self.values, covariance, self.effective_n, self.mode, self.cell_counts
        )


def _finite(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("expected a one-dimensional vector")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    return x


def iterative_to_overall(r) -> np.ndarray:
    """Cumulate iterative violations ``r_2..r_T`` into overall violations (``r_1 = 0``)."""
    return np.cumsum(_finite(r))


def overall_to_iterative(delta) -> np.ndarray:
    """Inverse of :func:`iterative_to_overall`."""
    delta = _finite(delta)
    return np.diff(delta, prepend=0.0)


def overall_transform_matrix(layout: TimeLayout) -> np.ndarray:
    """Lower-triangular-of-ones on the pre-block, identity on the post-block."""
    k = layout.n_pre_terms
    L = np.eye(layout.theta_length())
    L[:k, :k] = np.tril(np.ones((k, k)))
    return L


def transform_theta_to_overall(est: ThetaEstimate) -> ThetaEstimate:
    """Express the pre-block of ``est`` as overall violations, propagating the covariance."""
    if est.mode is not ViolationMode.ITERATIVE:
        raise ValueError("estimate is already expressed in overall violations")
    pre, post = est.pre, est.post
    values = np.concatenate([iterative_to_overall(pre), post]) if pre.size else est.values
    cov = None
    if est.covariance is not None:
        L = overall_transform_matrix(est.layout)
        cov = L @ est.covariance @ L.T
        cov = 0.5 * (cov + cov.T)
    return ThetaEstimate(
        est.layout, values, cov, est.effective_n, ViolationMode.OVERALL, est.cell_counts
    )
