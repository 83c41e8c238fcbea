"""Severity pretest for the extrapolation condition."""

from __future__ import annotations

from dataclasses import dataclass

from .core import SeverityParams, ThetaEstimate, ViolationMode, transform_theta_to_overall
from .severity import severity


@dataclass(frozen=True)
class PretestResult:
    """Outcome of the pretest.

    ``phi`` follows the rejection convention: ``phi == 1`` means the estimated
    pre-period severity exceeds ``M`` and the extrapolation condition is declared
    false. ``margin = M - s_pre_hat`` is a diagnostic only; no critical value or
    p-value is attached to it.
    """

    s_pre_hat: float
    threshold_M: float
    phi: int
    margin: float
    mode: ViolationMode = ViolationMode.ITERATIVE

    @property
    def extrapolation_declared(self) -> bool:
        return self.phi == 0

    def describe(self) -> str:
        if self.phi == 0:
            return (
                f"extrapolation condition declared TRUE "
                f"(estimated severity {self.s_pre_hat:.6g} <= M = {self.threshold_M:.6g})"
            )
        return (
            f"extrapolation condition declared FALSE "
            f"(estimated severity {self.s_pre_hat:.6g} > M = {self.threshold_M:.6g})"
        )


def align_mode(est: ThetaEstimate, mode: ViolationMode) -> ThetaEstimate:
    """Return ``est`` expressed in the violation notion ``mode``."""
    mode = ViolationMode(mode)
    if est.mode is mode:
        return est
    if mode is ViolationMode.OVERALL:
        return transform_theta_to_overall(est)
    raise ValueError("cannot convert an overall-violation estimate back to iterative form")


def decide(s_pre_hat: float, params: SeverityParams) -> PretestResult:
    phi = 0 if s_pre_hat <= params.threshold_M else 1
    return PretestResult(
        s_pre_hat=float(s_pre_hat),
        threshold_M=float(params.threshold_M),
        phi=phi,
        margin=float(params.threshold_M - s_pre_hat),
        mode=params.mode,
    )


def run_pretest(est: ThetaEstimate, params: SeverityParams) -> PretestResult:
    est = align_mode(est, params.mode)
    return decide(severity(est.pre, params.p), params)
