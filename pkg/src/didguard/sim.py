"""Simulation DGP and Monte-Carlo experiments for the conditional extrapolation method."""

from __future__ import annotations

import dataclasses
import enum
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from .core import SeverityParams, TimeLayout, iterative_to_overall
from .estimators import Dataset, Design, default_threads, estimate_theta_sample_means
from .inference import InferenceParams, confidence_interval
from .pretest import run_pretest
from .severity import severity

RESULT_COLUMNS = [
    "experiment", "scenario_id", "x_name", "x_value", "metric", "value", "mc_se", "n_conditioning",
]


@dataclass(frozen=True)
class DgpSpec:
    """Population and sampling parameters of the simulation design.

    ``t_pre``/``t_post`` define the layout (``T = t_pre + t_post``, ``t0 = t_pre + 1``).
    ``p`` is used both to scale the violations and for inference.
    """

    t_pre: int = 3
    t_post: int = 1
    s_pre_target: float = 1.5
    threshold_M: float = 2.0
    p: float = 2.0
    trend_alpha: float = 0.3
    ar_rho: float = 0.7
    effect_beta: float = 2.0
    sigma_treated: float = 2.1
    sigma_control: float = 1.5
    n_per_cell: int = 100

    def __post_init__(self):
        if self.s_pre_target < 0:
            raise ValueError("s_pre_target must be nonnegative")
        if self.sigma_treated <= 0 or self.sigma_control <= 0:
            raise ValueError("outcome standard deviations must be positive")
        if self.n_per_cell < 2:
            raise ValueError("n_per_cell must be at least 2")
        SeverityParams(self.p, self.threshold_M)
        TimeLayout.from_lengths(self.t_pre, self.t_post)

    @property
    def layout(self) -> TimeLayout:
        return TimeLayout.from_lengths(self.t_pre, self.t_post)

    @property
    def s_post(self) -> float:
        if self.s_pre_target <= self.threshold_M:
            return self.s_pre_target
        return 10.0 * self.s_pre_target


@dataclass(frozen=True)
class Population:
    """Conditional outcome means indexed by period ``1..T`` and the true estimands."""

    layout: TimeLayout
    mean_control: np.ndarray
    mean_treated_untreated: np.ndarray
    mean_treated: np.ndarray
    violations_r: np.ndarray  # r_2..r_T
    true_tau_att: float
    true_tau_dd: float

    @property
    def theta(self) -> np.ndarray:
        """Population counterpart of the estimator vector."""
        t0 = self.layout.treatment_time
        diff = self.mean_treated - self.mean_control
        pre = np.diff(diff[: t0 - 1])
        post = diff[t0 - 1 :] - diff[t0 - 2]
        return np.concatenate([pre, post])


def preliminary_violations(T: int) -> np.ndarray:
    t = np.arange(2, T + 1, dtype=float)
    return math.log(T) * (np.sin(t) + np.cos(t / 2.0))


def _rescale(values: np.ndarray, target: float, p: float) -> np.ndarray:
    if target == 0:
        return np.zeros_like(values)
    s = severity(values, p)
    if s == 0:
        raise ValueError("preliminary violations have zero severity; cannot rescale")
    return values * (target / s)


def control_means(T: int, trend_alpha: float, ar_rho: float) -> np.ndarray:
    m = np.empty(T)
    prev = 0.0
    log_T = math.log(T)
    for t in range(1, T + 1):
        prev = ar_rho * prev + trend_alpha * t + log_T * (math.cos(t) + math.sin(t / 2.0))
        m[t - 1] = prev
    return m


def build_population(spec: DgpSpec) -> Population:
    layout = spec.layout
    T, t0 = layout.total_periods, layout.treatment_time
    raw = preliminary_violations(T)
    k = layout.n_pre_terms
    r = np.concatenate([
        _rescale(raw[:k], spec.s_pre_target, spec.p),
        _rescale(raw[k:], spec.s_post, spec.p),
    ])
    m0 = control_means(T, spec.trend_alpha, spec.ar_rho)
    untreated = m0 + np.concatenate([[0.0], iterative_to_overall(r)])
    periods = np.arange(1, T + 1)
    treated = untreated + spec.effect_beta * (periods >= t0)
    diff = treated - m0
    dd = diff[t0 - 1 :] - diff[t0 - 2]
    return Population(
        layout=layout,
        mean_control=m0,
        mean_treated_untreated=untreated,
        mean_treated=treated,
        violations_r=r,
        true_tau_att=float(spec.effect_beta),
        true_tau_dd=float(np.mean(dd)),
    )


def sample_dataset(pop: Population, spec: DgpSpec, seed) -> Dataset:
    """Independent normal draws per (group, period) cell, as repeated cross-sections."""
    rng = np.random.default_rng(seed)
    T, n = pop.layout.total_periods, spec.n_per_cell
    control = pop.mean_control[:, None] + spec.sigma_control * rng.standard_normal((T, n))
    treated = pop.mean_treated[:, None] + spec.sigma_treated * rng.standard_normal((T, n))
    times = np.repeat(np.arange(1, T + 1), n)
    return Dataset(
        time=np.concatenate([times, times]),
        treated=np.concatenate([np.zeros(T * n, bool), np.ones(T * n, bool)]),
        outcome=np.concatenate([control.ravel(), treated.ravel()]),
        layout=pop.layout,
        design=Design.REPEATED_CROSS_SECTION,
    )


class ExperimentKind(str, enum.Enum):
    REJECTION_CURVE = "RejectionCurve"
    CONDITIONAL_COVERAGE = "ConditionalCoverage"
    VALID_REPORTING = "ValidReporting"
    EXPECTED_WIDTH = "ExpectedWidth"
    WIDTH_VS_P = "WidthVsP"


@dataclass(frozen=True)
class ExperimentSpec:
    """A grid of DGP overrides, each simulated ``replications`` times.

    ``grid`` maps DgpSpec field names to value lists; scenarios are their
    Cartesian product in key order. For ``WidthVsP`` a single sample is drawn
    from ``base`` and only the inference ``p`` follows the grid.
    """

    kind: ExperimentKind
    grid: dict
    base: DgpSpec = field(default_factory=DgpSpec)
    replications: int = 5000
    alpha: float = 0.05
    master_seed: int = 0
    mc_draws: int = 5000
    x_name: Optional[str] = None
    name: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ExperimentKind(self.kind))
        if not self.grid or not all(len(v) for v in self.grid.values()):
            raise ValueError("experiment grid must be nonempty")
        fields = {f.name for f in dataclasses.fields(DgpSpec)}
        unknown = set(self.grid) - fields
        if unknown:
            raise ValueError(f"unknown grid keys: {sorted(unknown)}")
        if self.kind is ExperimentKind.WIDTH_VS_P:
            if set(self.grid) != {"p"}:
                raise ValueError("WidthVsP sweeps exactly the key 'p'")
        elif self.replications < 100:
            raise ValueError("replications must be at least 100")
        if self.replications < 1:
            raise ValueError("replications must be positive")
        if self.x_name is not None and self.x_name not in self.grid:
            raise ValueError(f"x_name {self.x_name!r} is not a grid key")

    def scenarios(self) -> list[dict]:
        keys = list(self.grid)
        return [dict(zip(keys, combo)) for combo in itertools.product(*self.grid.values())]

    @property
    def label(self) -> str:
        return self.name or self.kind.value


def _scenario_id(overrides: dict) -> str:
    return ",".join(f"{k}={_fmt(v)}" for k, v in overrides.items())


def _fmt(v) -> str:
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return repr(v) if isinstance(v, float) else str(v)


def _replicate(spec: DgpSpec, pop: Population, params: Optional[InferenceParams], seed) -> tuple:
    data = sample_dataset(pop, spec, seed)
    est = estimate_theta_sample_means(data, covariance="plugin" if params else "none")
    sev = SeverityParams(spec.p, spec.threshold_M)
    if params is None:
        return (run_pretest(est, sev).phi,)
    rep = confidence_interval(est, params)
    return (
        rep.pretest.phi,
        rep.covers(pop.true_tau_att),
        rep.conventional_covers(pop.true_tau_att),
        2.0 * rep.half_width,
        rep.point,
    )


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    if x.size == 0:
        return math.nan, math.nan
    m = float(np.mean(x))
    se = float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else math.nan
    return m, se


def _summarize(kind: ExperimentKind, out: np.ndarray) -> list[tuple]:
    """Rows of ``(metric, value, mc_se, n_conditioning)`` from per-replicate outcomes."""
    R = out.shape[0]
    phi = out[:, 0]
    rows = [("rejection_rate", *_mean_se(phi), R)]
    if kind is ExperimentKind.REJECTION_CURVE:
        return rows
    cover, conv, width, point = out[:, 1], out[:, 2], out[:, 3], out[:, 4]
    passed = phi == 0
    n_pass = int(passed.sum())
    rows += [
        ("conditional_coverage", *_mean_se(cover[passed]), n_pass),
        ("conventional_conditional_coverage", *_mean_se(conv[passed]), n_pass),
        ("valid_reporting", *_mean_se(cover * passed), R),
        ("expected_width", *_mean_se(width), R),
        ("mean_point_estimate", *_mean_se(point), R),
    ]
    return rows


def _width_vs_p(spec: ExperimentSpec, threads: int) -> pd.DataFrame:
    base = spec.base
    pop = build_population(base)
    data = sample_dataset(pop, base, [int(spec.master_seed), 0, 0])
    est = estimate_theta_sample_means(data)
    rows = []
    for p in spec.grid["p"]:
        params = InferenceParams(
            SeverityParams(float(p), base.threshold_M),
            alpha=spec.alpha,
            mc_draws=spec.mc_draws,
            seed=spec.master_seed,
            threads=threads,
        )
        rep = confidence_interval(est, params)
        rows.append(
            (spec.label, _scenario_id({"p": p}), "p", float(p), "width", 2.0 * rep.half_width, math.nan, 1)
        )
    return pd.DataFrame(rows, columns=RESULT_COLUMNS)


def run_experiment(spec: ExperimentSpec, threads: Optional[int] = None) -> pd.DataFrame:
    """Run every grid scenario and return a tidy table, one row per (scenario, metric).

    Replicate ``i`` of scenario ``g`` samples with seed ``(master_seed, g, i)`` and
    critical values use the same triple, so the table does not depend on
    ``threads``. Conditional metrics with no conditioning replicates are NaN.
    """
    threads = threads or default_threads()
    if spec.kind is ExperimentKind.WIDTH_VS_P:
        return _width_vs_p(spec, threads)

    x_name = spec.x_name or next(iter(spec.grid))
    rows = []
    for g, overrides in enumerate(spec.scenarios()):
        dgp = dataclasses.replace(spec.base, **overrides)
        pop = build_population(dgp)
        needs_ci = spec.kind is not ExperimentKind.REJECTION_CURVE

        def one(i, dgp=dgp, pop=pop, g=g):
            seed = [int(spec.master_seed), g, i]
            params = None
            if needs_ci:
                params = InferenceParams(
                    SeverityParams(dgp.p, dgp.threshold_M),
                    alpha=spec.alpha,
                    mc_draws=spec.mc_draws,
                    seed=int(np.random.SeedSequence(seed).generate_state(1, np.uint64)[0]),
                )
            return _replicate(dgp, pop, params, seed)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(one, range(spec.replications)))
        else:
            results = [one(i) for i in range(spec.replications)]
        out = np.asarray(results, dtype=float)
        sid = _scenario_id(overrides)
        x_value = float(overrides[x_name])
        for metric, value, se, n_cond in _summarize(spec.kind, out):
            rows.append((spec.label, sid, x_name, x_value, metric, value, se, n_cond))
    return pd.DataFrame(rows, columns=RESULT_COLUMNS)


def write_results(table: pd.DataFrame, path) -> None:
    """Tidy CSV; undefined values are written as ``NA``."""
    table.to_csv(path, index=False, na_rep="NA", float_format="%.10g", lineterminator="\n")
