"""Monotone score calibration and its effect on decision metrics."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np
from sklearn.isotonic import isotonic_regression

from .dataset import ScoreArrays
from .decision_metrics import (
    COVARIATE_CALIBRATION_NOTE,
    ScoreSource,
    as_arrays,
    decompose,
    global_correlation,
    recovery,
    sign_agreement,
    tie_adjusted_agreement,
    tie_diagnostics,
    top1_accuracy,
    within_correlation,
)
from .errors import InsufficientDataError, LengthMismatchError, MetricUndefinedError
from .utils import as_float_list, floor_count

logger = logging.getLogger(__name__)

Transform = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class MonotoneCalibrator:
    """Right-continuous step function, flat beyond the fitted range."""

    breakpoints: np.ndarray
    values: np.ndarray

    def __call__(self, scores: Union[Sequence[float], np.ndarray]) -> np.ndarray:
        scores = np.asarray(scores, dtype=float)
        index = np.searchsorted(self.breakpoints, scores, side="right") - 1
        index = np.clip(index, 0, self.breakpoints.size - 1)
        return self.values[index]

    def to_dict(self) -> Dict[str, List[float]]:
        return {
            "breakpoints": as_float_list(self.breakpoints),
            "values": as_float_list(self.values),
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "MonotoneCalibrator":
        breakpoints = np.asarray(payload["breakpoints"], dtype=float)
        values = np.asarray(payload["values"], dtype=float)
        if breakpoints.size != values.size or breakpoints.size == 0:
            raise LengthMismatchError("calibrator breakpoints and values must have equal, non-zero length")
        return cls(breakpoints=breakpoints, values=values)


def isotonic_fit(scores: Sequence[float], labels: Sequence[float]) -> MonotoneCalibrator:
    """Least-squares non-decreasing fit; tied scores are pooled first, weighted by multiplicity."""
    x = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=float)
    if x.size != y.size:
        raise LengthMismatchError(f"{x.size} scores but {y.size} labels")
    if x.size < 2:
        raise LengthMismatchError("isotonic fit needs at least 2 points")
    breakpoints, inverse = np.unique(x, return_inverse=True)
    weights = np.bincount(inverse).astype(float)
    pooled = np.bincount(inverse, weights=y) / weights
    fitted = isotonic_regression(pooled, sample_weight=weights, increasing=True)
    return MonotoneCalibrator(breakpoints=breakpoints, values=np.asarray(fitted, dtype=float))


# --------------------------------------------------------------------------
# Level vs direction


EFFECT_METRICS: Dict[str, Callable[[ScoreArrays], float]] = {
    "global_r": global_correlation,
    "within_r": lambda a: within_correlation(decompose(a)),
    "p_nt": sign_agreement,
    "p_eff": tie_adjusted_agreement,
    "recovery": recovery,
    "pcs": top1_accuracy,
    "judge_tie_rate": lambda a: tie_diagnostics(a).judge_pairwise_tie_rate,
}


def _metric_table(arrays: ScoreArrays) -> Dict[str, Optional[float]]:
    table: Dict[str, Optional[float]] = {}
    for name, fn in EFFECT_METRICS.items():
        try:
            table[name] = float(fn(arrays))
        except MetricUndefinedError as exc:
            logger.info("calibration effect: %s undefined (%s)", name, exc)
            table[name] = None
    return table


@dataclass(frozen=True)
class CalibrationEffect:
    before: Dict[str, Optional[float]]
    after: Dict[str, Optional[float]]
    delta: Dict[str, Optional[float]]
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "before": dict(self.before),
            "after": dict(self.after),
            "delta": dict(self.delta),
            "notes": list(self.notes),
        }

    def to_markdown(self) -> str:
        def fmt(value: Optional[float]) -> str:
            return "---" if value is None else f"{value:+.4f}"

        lines = ["| Metric | Raw | Calibrated | Change |", "|---|---:|---:|---:|"]
        for name in EFFECT_METRICS:
            before, after = self.before[name], self.after[name]
            lines.append(
                f"| {name} | {'---' if before is None else f'{before:.4f}'} | "
                f"{'---' if after is None else f'{after:.4f}'} | {fmt(self.delta[name])} |"
            )
        if self.notes:
            lines += [""] + [f"- {note}" for note in self.notes]
        return "\n".join(lines) + "\n"


def calibration_effect(ds: ScoreSource, calibrator: Transform) -> CalibrationEffect:
    """Metrics before and after replacing judge scores with calibrated scores."""
    arrays = as_arrays(ds)
    arrays.require_labeled("calibration_effect")
    calibrated = arrays.with_judge(calibrator(arrays.judge))
    before = _metric_table(arrays)
    after = _metric_table(calibrated)
    delta = {
        name: None if before[name] is None or after[name] is None else after[name] - before[name]
        for name in EFFECT_METRICS
    }
    return CalibrationEffect(before=before, after=after, delta=delta, notes=[COVARIATE_CALIBRATION_NOTE])


@dataclass(frozen=True)
class SplitCalibration:
    calibrator: MonotoneCalibrator
    effect: CalibrationEffect
    n_fit_prompts: int
    n_eval_prompts: int
    seed: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "n_fit_prompts": self.n_fit_prompts,
            "n_eval_prompts": self.n_eval_prompts,
            "calibrator": self.calibrator.to_dict(),
            "effect": self.effect.to_dict(),
        }


def split_calibration_effect(
    ds: ScoreSource, seed: int = 7, fit_fraction: float = 0.5
) -> SplitCalibration:
    """Fit the isotonic calibrator on a seeded share of prompts, evaluate on the rest."""
    arrays = as_arrays(ds)
    arrays.require_labeled("split_calibration_effect")
    n = arrays.n_prompts
    n_fit = floor_count(fit_fraction, n)
    if n_fit < 1 or n_fit >= n:
        raise InsufficientDataError(
            f"a {fit_fraction} split of {n} prompts leaves one side empty"
        )
    order = np.random.default_rng(np.random.SeedSequence([seed])).permutation(n)
    fit_part = arrays.take(np.sort(order[:n_fit]))
    eval_part = arrays.take(np.sort(order[n_fit:]))
    calibrator = isotonic_fit(fit_part.judge[fit_part.mask], fit_part.oracle[fit_part.mask])
    return SplitCalibration(
        calibrator=calibrator,
        effect=calibration_effect(eval_part, calibrator),
        n_fit_prompts=n_fit,
        n_eval_prompts=n - n_fit,
        seed=seed,
    )
