"""Estimators of the violation/DID vector and its covariance from long-format data."""

from __future__ import annotations

import enum
import logging
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import ThetaEstimate, TimeLayout

logger = logging.getLogger(__name__)


class Design(str, enum.Enum):
    PANEL = "panel"
    REPEATED_CROSS_SECTION = "rcs"


class ResampleLevel(str, enum.Enum):
    CLUSTER = "cluster"
    UNIT = "unit"
    ROW = "row"


class DataError(ValueError):
    """Raised when a dataset violates the estimator preconditions."""


@dataclass(frozen=True)
class BootstrapConfig:
    replications: int = 1000
    resample_level: ResampleLevel = ResampleLevel.CLUSTER
    seed: int = 0
    threads: Optional[int] = None

    def __post_init__(self):
        if self.replications < 100:
            raise ValueError("bootstrap covariance needs at least 100 replications")
        if self.replications < 400:
            warnings.warn(
                f"only {self.replications} bootstrap replications; covariance will be noisy",
                stacklevel=3,
            )
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "resample_level", ResampleLevel(self.resample_level))


@dataclass
class Dataset:
    """Long-format outcomes with one row per (unit, period) observation.

    Cell ``(d, t)`` is the set of rows with ``treated == d`` and ``time == t``.
    Every cell must hold at least two rows.
    """

    time: np.ndarray
    treated: np.ndarray
    outcome: np.ndarray
    layout: TimeLayout
    design: Design = Design.REPEATED_CROSS_SECTION
    unit_id: Optional[np.ndarray] = None
    cluster_id: Optional[np.ndarray] = None
    weight: Optional[np.ndarray] = None
    cell_counts: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=np.int64)
        self.treated = np.asarray(self.treated).astype(bool)
        self.outcome = np.asarray(self.outcome, dtype=float)
        self.design = Design(self.design)
        n = self.outcome.shape[0]
        for name in ("time", "treated"):
            if getattr(self, name).shape != (n,):
                raise DataError(f"column {name!r} has length {getattr(self, name).shape[0]}, expected {n}")
        for name in ("unit_id", "cluster_id", "weight"):
            col = getattr(self, name)
            if col is not None and np.asarray(col).shape != (n,):
                raise DataError(f"column {name!r} has the wrong length")
        if not np.all(np.isfinite(self.outcome)):
            raise DataError("outcome contains non-finite values")
        T = self.layout.total_periods
        bad = (self.time < 1) | (self.time > T)
        if np.any(bad):
            i = int(np.argmax(bad))
            raise DataError(f"row {i}: time {self.time[i]} outside 1..{T}")
        if self.weight is not None:
            self.weight = np.asarray(self.weight, dtype=float)
            if not np.all(np.isfinite(self.weight) & (self.weight > 0)):
                raise DataError("weights must be strictly positive and finite")
        self.cell_counts = np.bincount(
            self._cell_index(), minlength=2 * T
        ).reshape(2, T)
        empty = np.argwhere(self.cell_counts < 2)
        if empty.size:
            d, t = empty[0]
            raise DataError(
                f"cell (treated={d}, time={t + 1}) has {self.cell_counts[d, t]} rows; need >= 2"
            )
        if self.design is Design.PANEL:
            self._check_panel()

    def _cell_index(self) -> np.ndarray:
        return self.treated.astype(np.int64) * self.layout.total_periods + (self.time - 1)

    def _check_panel(self):
        if self.unit_id is None:
            raise DataError("panel design requires a unit_id column")
        units, inv = np.unique(np.asarray(self.unit_id), return_inverse=True)
        T = self.layout.total_periods
        counts = np.zeros((units.size, T), dtype=np.int64)
        np.add.at(counts, (inv, self.time - 1), 1)
        bad = np.argwhere(counts != 1)
        if bad.size:
            u, t = bad[0]
            raise DataError(
                f"panel unit {units[u]!r} appears {counts[u, t]} times in period {t + 1}; expected once"
            )
        status = np.zeros(units.size)
        np.add.at(status, inv, self.treated)
        mixed = (status != 0) & (status != T)
        if np.any(mixed):
            raise DataError(f"panel unit {units[np.argmax(mixed)]!r} changes treated status")

    @property
    def n_rows(self) -> int:
        return self.outcome.shape[0]

    @property
    def weighted(self) -> bool:
        return self.weight is not None and not np.all(self.weight == self.weight[0])

    def take(self, rows: np.ndarray, unit_labels: Optional[np.ndarray] = None) -> "Dataset":
        """Subset (with repetition) of rows; ``unit_labels`` replaces unit ids."""
        pick = lambda a: None if a is None else np.asarray(a)[rows]
        return Dataset(
            time=self.time[rows],
            treated=self.treated[rows],
            outcome=self.outcome[rows],
            layout=self.layout,
            design=self.design,
            unit_id=unit_labels if unit_labels is not None else pick(self.unit_id),
            cluster_id=pick(self.cluster_id),
            weight=pick(self.weight),
        )


def _cell_moments(data: Dataset):
    """Weighted cell means and variances of the means, each shaped ``(2, T)``."""
    T = data.layout.total_periods
    idx = data._cell_index()
    w = np.ones(data.n_rows) if data.weight is None else data.weight
    sw = np.bincount(idx, weights=w, minlength=2 * T)
    sw2 = np.bincount(idx, weights=w * w, minlength=2 * T)
    means = np.bincount(idx, weights=w * data.outcome, minlength=2 * T) / sw
    resid = data.outcome - means[idx]
    ss = np.bincount(idx, weights=w * resid * resid, minlength=2 * T) / sw
    n_eff = sw * sw / sw2
    # Bessel-corrected weighted variance over the Kish effective size
    var_of_mean = ss * n_eff / (n_eff - 1.0) / n_eff
    return means.reshape(2, T), var_of_mean.reshape(2, T)


def contrast_matrix(layout: TimeLayout) -> np.ndarray:
    """Linear map from the ``T`` group-mean differences to the estimator vector."""
    T, t0 = layout.total_periods, layout.treatment_time
    A = np.zeros((layout.theta_length(), T))
    row = 0
    for t in range(2, t0):
        A[row, t - 1] += 1.0
        A[row, t - 2] -= 1.0
        row += 1
    for t in range(t0, T + 1):
        A[row, t - 1] += 1.0
        A[row, t0 - 2] -= 1.0
        row += 1
    return A


def estimate_theta_sample_means(data: Dataset, covariance: str = "plugin") -> ThetaEstimate:
    """Double differences of (weighted) cell means.

    ``covariance`` is ``"plugin"`` (repeated cross-sections only) or ``"none"``.
    The plug-in treats the ``2T`` cell means as independent.
    """
    if covariance not in ("plugin", "none"):
        raise ValueError(f"unknown covariance option {covariance!r}")
    if covariance == "plugin" and data.design is Design.PANEL:
        raise DataError(
            "plug-in covariance is unavailable for panel data (serial correlation); "
            "use the bootstrap covariance instead"
        )
    layout = data.layout
    means, var_of_mean = _cell_moments(data)
    A = contrast_matrix(layout)
    values = A @ (means[1] - means[0])
    cov = None
    if covariance == "plugin":
        # the treated and control means are independent, so their variances add
        cov = (A * (var_of_mean[1] + var_of_mean[0])) @ A.T
    return ThetaEstimate(
        layout,
        values,
        cov,
        effective_n=int(data.cell_counts.min()),
        cell_counts={"treated": data.cell_counts[1].tolist(), "control": data.cell_counts[0].tolist()},
    )


def _demean_by(codes: np.ndarray, X: np.ndarray) -> np.ndarray:
    n_groups = int(codes.max()) + 1
    counts = np.bincount(codes, minlength=n_groups).astype(float)
    if X.ndim == 1:
        return X - (np.bincount(codes, weights=X, minlength=n_groups) / counts)[codes]
    out = np.empty_like(X)
    for j in range(X.shape[1]):
        col = X[:, j]
        out[:, j] = col - (np.bincount(codes, weights=col, minlength=n_groups) / counts)[codes]
    return out


def estimate_theta_twfe(data: Dataset) -> ThetaEstimate:
    """Saturated lead/lag two-way fixed-effects regression.

    ``Y_it = a_i + l_t + sum_{s<t0-1} delta_s D_i 1{t=s} + sum_{s>=t0} beta_s D_i 1{t=s}``
    with ``delta_{t0-1} = 0``. Unit fixed effects are used for panels and group
    fixed effects for repeated cross-sections; they are partialled out by
    within-demeaning. Returns ``r_t = delta_t - delta_{t-1}`` on the pre-block and
    ``beta_t`` on the post-block, without covariance.
    """
    if data.weighted:
        raise DataError("the TWFE estimator does not support weights; use the sample-means estimator")
    layout = data.layout
    T, t0 = layout.total_periods, layout.treatment_time
    if data.design is Design.PANEL:
        _, codes = np.unique(np.asarray(data.unit_id), return_inverse=True)
    else:
        codes = data.treated.astype(np.int64)
    periods = np.arange(1, T + 1)
    time_dummies = (data.time[:, None] == periods[None, 1:]).astype(float)
    event_periods = [s for s in periods if s != t0 - 1]
    interactions = (
        (data.time[:, None] == np.array(event_periods)[None, :]) & data.treated[:, None]
    ).astype(float)
    X = _demean_by(codes, np.hstack([time_dummies, interactions]))
    y = _demean_by(codes, data.outcome)
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1]:
        raise DataError(f"TWFE design is rank deficient (rank {rank} < {X.shape[1]} columns)")
    event = dict(zip(event_periods, coef[T - 1 :]))
    event[t0 - 1] = 0.0
    pre = [event[t] - event[t - 1] for t in range(2, t0)]
    post = [event[t] for t in range(t0, T + 1)]
    return ThetaEstimate(
        layout, np.array(pre + post), None, effective_n=int(data.cell_counts.min())
    )


ESTIMATORS: dict[str, Callable[[Dataset], ThetaEstimate]] = {
    "means": lambda d: estimate_theta_sample_means(d, covariance="none"),
    "twfe": estimate_theta_twfe,
}


def default_threads() -> int:
    env = os.environ.get("DIDGUARD_THREADS")
    return max(1, int(env)) if env else 1


def _resampling_groups(data: Dataset, level: ResampleLevel) -> Optional[np.ndarray]:
    if level is ResampleLevel.ROW:
        return None
    col = data.cluster_id if level is ResampleLevel.CLUSTER else data.unit_id
    if col is None:
        raise DataError(f"resampling by {level.value} requires a {level.value}_id column")
    _, codes = np.unique(np.asarray(col), return_inverse=True)
    return codes


def estimate_covariance_bootstrap(
    data: Dataset,
    point: str | Callable[[Dataset], ThetaEstimate] = "means",
    cfg: BootstrapConfig = BootstrapConfig(),
) -> np.ndarray:
    """Block-bootstrap covariance of the estimator vector.

    Whole clusters (or units, or rows) are drawn with replacement. Replicate ``b``
    draws from a generator seeded by ``(seed, b)``, so the result does not depend
    on the thread count. Resamples leaving a cell with fewer than two rows are
    redrawn, up to ``100 * B`` attempts in total.
    """
    estimator = ESTIMATORS[point] if isinstance(point, str) else point
    codes = _resampling_groups(data, cfg.resample_level)
    if codes is None:
        members = [np.array([i]) for i in range(data.n_rows)]
    else:
        order = np.argsort(codes, kind="stable")
        bounds = np.cumsum(np.bincount(codes))
        members = np.split(order, bounds[:-1])
    n_groups = len(members)
    if cfg.resample_level is ResampleLevel.CLUSTER and n_groups < 2:
        raise DataError("cluster bootstrap needs at least two distinct clusters")
    unit_codes = None
    if data.design is Design.PANEL:
        _, unit_codes = np.unique(np.asarray(data.unit_id), return_inverse=True)
        n_units = int(unit_codes.max()) + 1

    B = cfg.replications
    max_attempts = 100 * B

    def replicate(b: int):
        rng = np.random.default_rng([int(cfg.seed), b])
        attempts = 0
        while True:
            attempts += 1
            pick = rng.integers(0, n_groups, size=n_groups)
            rows = np.concatenate([members[g] for g in pick])
            labels = None
            if unit_codes is not None:
                # a unit drawn twice becomes two distinct units in the resample
                draw = np.concatenate([np.full(members[g].size, j) for j, g in enumerate(pick)])
                labels = draw * n_units + unit_codes[rows]
            try:
                sample = data.take(rows, labels)
            except DataError:
                if attempts >= max_attempts:
                    raise
                continue
            return estimator(sample).values, attempts

    threads = cfg.threads or default_threads()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(replicate, range(B)))
    else:
        results = [replicate(b) for b in range(B)]
    redraws = sum(a for _, a in results) - B
    if redraws > max_attempts:
        raise DataError(f"bootstrap needed {redraws} redraws for empty cells; giving up")
    if redraws:
        logger.info("bootstrap redrew %d resamples with empty cells", redraws)
    draws = np.vstack([v for v, _ in results])
    cov = np.cov(draws, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    return 0.5 * (cov + cov.T)
