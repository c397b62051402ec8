"""Pointwise decision-validity metrics.

All metrics work on the padded :class:`~judge_audit.dataset.ScoreArrays`
view, so they accept either a dataset or the arrays themselves. Random
tie-breaking is always evaluated as an exact expectation over the tie set.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy import stats

from .dataset import PointwiseDataset, ScoreArrays
from .errors import (
    AllSkippedError,
    ConfigError,
    DegenerateDenominatorError,
    DegenerateVarianceError,
    InsufficientDataError,
    MetricUndefinedError,
    NoComparablePairsError,
)
from .utils import argmax_tie_mask, ceil_count, pair_differences

if TYPE_CHECKING:  # pragma: no cover
    from .inference import BootstrapConfig, IntervalEstimate

logger = logging.getLogger(__name__)

ScoreSource = Union[PointwiseDataset, ScoreArrays]

P_EFF_NOTE = (
    "p_eff is computed over within-prompt pairs where the oracle is not tied; "
    "judge ties count as 0.5"
)
COVARIATE_CALIBRATION_NOTE = (
    "covariate (two-stage) calibration is not evaluated; it can break ties and "
    "raise recovery while lowering sign agreement"
)


def as_arrays(source: ScoreSource) -> ScoreArrays:
    if isinstance(source, ScoreArrays):
        return source
    return source.arrays


# --------------------------------------------------------------------------
# Shared per-prompt helpers


def _constant_rows(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    high = np.where(mask, values, -np.inf).max(axis=1)
    low = np.where(mask, values, np.inf).min(axis=1)
    return high == low


def _row_mean(values: np.ndarray, selected: np.ndarray) -> np.ndarray:
    """Mean over selected cells; exact when the selected cells are all equal."""
    counts = selected.sum(axis=1)
    totals = np.where(selected, values, 0.0).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = totals / counts
    high = np.where(selected, values, -np.inf).max(axis=1)
    low = np.where(selected, values, np.inf).min(axis=1)
    return np.where(high == low, high, means)


class PromptValues(NamedTuple):
    """Per-prompt selected oracle utility under each strategy."""

    oracle_best: np.ndarray
    random: np.ndarray
    judge: np.ndarray
    pcs: np.ndarray
    judge_tie: np.ndarray
    oracle_best_mask: np.ndarray


def prompt_values(
    source: ScoreSource, selection: Optional[np.ndarray] = None
) -> PromptValues:
    """Per-prompt values for labeled prompts (NaN rows for unlabeled ones).

    ``selection`` replaces the judge argmax set with any candidate mask; the
    judge value is then the expectation of uniform tie-breaking over it.
    """
    arrays = as_arrays(source)
    mask = arrays.mask
    oracle = arrays.oracle
    tie = argmax_tie_mask(arrays.judge, mask) if selection is None else selection & mask
    best_mask = argmax_tie_mask(np.where(np.isnan(oracle), -np.inf, oracle), mask)
    best = np.where(mask, oracle, -np.inf).max(axis=1)
    random_value = _row_mean(oracle, mask)
    judge_value = _row_mean(oracle, tie)
    pcs = (tie & best_mask).sum(axis=1) / tie.sum(axis=1)
    unlabeled = ~arrays.labeled
    if unlabeled.any():
        best = np.where(unlabeled, np.nan, best)
        random_value = np.where(unlabeled, np.nan, random_value)
        judge_value = np.where(unlabeled, np.nan, judge_value)
        pcs = np.where(unlabeled, np.nan, pcs)
    return PromptValues(best, random_value, judge_value, pcs, tie, best_mask)


class _PairSigns(NamedTuple):
    judge: np.ndarray
    oracle: np.ndarray
    valid: np.ndarray


def _pair_signs(arrays: ScoreArrays) -> _PairSigns:
    judge_diff, valid = pair_differences(arrays.judge, arrays.mask)
    oracle_diff, _ = pair_differences(np.nan_to_num(arrays.oracle), arrays.mask)
    return _PairSigns(np.sign(judge_diff), np.sign(oracle_diff), valid)


# --------------------------------------------------------------------------
# Decomposition and correlations


@dataclass(frozen=True, eq=False)
class ResidualTable:
    """Per-record prompt means and residuals, flattened in dataset order."""

    prompt_index: np.ndarray
    prompt_mean_judge: np.ndarray
    prompt_mean_oracle: np.ndarray
    judge_residual: np.ndarray
    oracle_residual: np.ndarray
    judge_constant_prompts: int
    oracle_constant_prompts: int
    n_prompts: int


def _centered(values: np.ndarray, mask: np.ndarray):
    means = _row_mean(values, mask)
    residual = values - means[:, None]
    constant = _constant_rows(values, mask)
    residual = np.where(constant[:, None], 0.0, residual)
    return means, residual, constant


def decompose(ds: ScoreSource) -> ResidualTable:
    """Split both channels into prompt means and within-prompt residuals."""
    arrays = as_arrays(ds)
    arrays.require_labeled("decompose")
    mask = arrays.mask
    judge_mean, judge_res, judge_const = _centered(arrays.judge, mask)
    oracle_mean, oracle_res, oracle_const = _centered(arrays.oracle, mask)
    rows = np.broadcast_to(np.arange(arrays.n_prompts)[:, None], mask.shape)
    return ResidualTable(
        prompt_index=rows[mask],
        prompt_mean_judge=np.broadcast_to(judge_mean[:, None], mask.shape)[mask],
        prompt_mean_oracle=np.broadcast_to(oracle_mean[:, None], mask.shape)[mask],
        judge_residual=judge_res[mask],
        oracle_residual=oracle_res[mask],
        judge_constant_prompts=int(judge_const.sum()),
        oracle_constant_prompts=int(oracle_const.sum()),
        n_prompts=arrays.n_prompts,
    )


def _pearson(x: np.ndarray, y: np.ndarray, what: str) -> float:
    if x.size < 2:
        raise DegenerateVarianceError(f"{what}: need at least 2 records")
    if np.all(x == x[0]):
        raise DegenerateVarianceError(f"{what}: degenerate judge variance")
    if np.all(y == y[0]):
        raise DegenerateVarianceError(f"{what}: degenerate oracle variance")
    return float(stats.pearsonr(x, y)[0])


def global_correlation(ds: ScoreSource) -> float:
    arrays = as_arrays(ds)
    arrays.require_labeled("global_correlation")
    return _pearson(arrays.judge[arrays.mask], arrays.oracle[arrays.mask], "global correlation")


def within_correlation(rt: ResidualTable) -> float:
    if rt.judge_constant_prompts == rt.n_prompts:
        raise DegenerateVarianceError("degenerate judge residual variance")
    if rt.oracle_constant_prompts == rt.n_prompts:
        raise DegenerateVarianceError("degenerate oracle residual variance")
    return _pearson(rt.judge_residual, rt.oracle_residual, "within-prompt correlation")


def attenuation_slope(rt: ResidualTable) -> float:
    if rt.oracle_constant_prompts == rt.n_prompts:
        raise DegenerateVarianceError("degenerate oracle residual variance")
    return float(np.dot(rt.judge_residual, rt.oracle_residual) / np.dot(rt.oracle_residual, rt.oracle_residual))


@dataclass(frozen=True)
class VarianceDecomposition:
    between_judge: float
    within_judge: float
    between_oracle: float
    within_oracle: float
    total_judge: float
    total_oracle: float


def _between_within(values: np.ndarray, mask: np.ndarray, channel: str):
    sizes = mask.sum(axis=1)
    total_n = sizes.sum()
    means, residual, _ = _centered(values, mask)
    grand = float(np.dot(sizes, means) / total_n)
    between = float(np.dot(sizes, (means - grand) ** 2) / total_n)
    within = float((np.where(mask, residual, 0.0) ** 2).sum() / total_n)
    total = between + within
    if total == 0.0:
        raise DegenerateVarianceError(f"{channel} channel has zero variance")
    return between / total, within / total, total


def variance_decomposition(ds: ScoreSource) -> VarianceDecomposition:
    """Law-of-total-variance split per channel, population moments, size-weighted."""
    arrays = as_arrays(ds)
    arrays.require_labeled("variance_decomposition")
    if arrays.n_prompts < 2:
        raise InsufficientDataError("variance decomposition needs at least 2 prompts")
    bj, wj, tj = _between_within(arrays.judge, arrays.mask, "judge")
    bo, wo, to = _between_within(arrays.oracle, arrays.mask, "oracle")
    return VarianceDecomposition(bj, wj, bo, wo, tj, to)


@dataclass(frozen=True)
class CovarianceDecomposition:
    total: float
    between: float
    within: float


def covariance_decomposition(ds: ScoreSource) -> CovarianceDecomposition:
    """Cov(S, O) = Cov(mu_S, mu_O) + E[Cov(S, O | prompt)] (population, size-weighted)."""
    arrays = as_arrays(ds)
    arrays.require_labeled("covariance_decomposition")
    mask = arrays.mask
    sizes = mask.sum(axis=1)
    total_n = sizes.sum()
    mean_s, res_s, _ = _centered(arrays.judge, mask)
    mean_o, res_o, _ = _centered(arrays.oracle, mask)
    grand_s = np.dot(sizes, mean_s) / total_n
    grand_o = np.dot(sizes, mean_o) / total_n
    between = float(np.dot(sizes, (mean_s - grand_s) * (mean_o - grand_o)) / total_n)
    within = float(np.where(mask, res_s * res_o, 0.0).sum() / total_n)
    return CovarianceDecomposition(total=between + within, between=between, within=within)


# --------------------------------------------------------------------------
# Pairwise agreement and rank correlation


def sign_agreement(ds: ScoreSource) -> float:
    """p_nt: agreement over within-prompt pairs where neither channel ties."""
    arrays = as_arrays(ds)
    arrays.require_labeled("sign_agreement")
    signs = _pair_signs(arrays)
    comparable = signs.valid & (signs.judge != 0) & (signs.oracle != 0)
    count = int(comparable.sum())
    if count == 0:
        raise NoComparablePairsError("no within-prompt pair is untied in both channels")
    return float((comparable & (signs.judge == signs.oracle)).sum() / count)


def tie_adjusted_agreement(ds: ScoreSource) -> float:
    """p_eff over oracle-untied pairs, judge ties counted as one half."""
    arrays = as_arrays(ds)
    arrays.require_labeled("tie_adjusted_agreement")
    signs = _pair_signs(arrays)
    decided = signs.valid & (signs.oracle != 0)
    count = int(decided.sum())
    if count == 0:
        raise NoComparablePairsError("no within-prompt pair has an oracle preference")
    agree = int((decided & (signs.judge == signs.oracle)).sum())
    judge_tied = int((decided & (signs.judge == 0)).sum())
    return (agree + 0.5 * judge_tied) / count


class KendallResult(NamedTuple):
    mean_tau: float
    skipped: int


def kendall_tau_b_per_prompt(ds: ScoreSource) -> np.ndarray:
    """Tie-corrected Kendall tau-b per prompt; NaN where it is undefined."""
    arrays = as_arrays(ds)
    signs = _pair_signs(arrays)
    valid = signs.valid
    n0 = valid.sum(axis=1)
    judge_ties = (valid & (signs.judge == 0)).sum(axis=1)
    oracle_ties = (valid & (signs.oracle == 0)).sum(axis=1)
    net = np.where(valid, signs.judge * signs.oracle, 0.0).sum(axis=1)
    denom = (n0 - judge_ties).astype(float) * (n0 - oracle_ties).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        tau = net / np.sqrt(denom)
    return np.where(denom > 0, tau, np.nan)


def mean_kendall_tau(ds: ScoreSource) -> KendallResult:
    arrays = as_arrays(ds)
    arrays.require_labeled("mean_kendall_tau")
    tau = kendall_tau_b_per_prompt(arrays)
    defined = ~np.isnan(tau)
    skipped = int((~defined).sum())
    if not defined.any():
        raise AllSkippedError("Kendall tau-b is undefined for every prompt")
    if skipped:
        logger.info("Kendall tau-b skipped %d prompt(s) with a fully tied channel", skipped)
    return KendallResult(float(tau[defined].mean()), skipped)


# --------------------------------------------------------------------------
# Selection values


@dataclass(frozen=True)
class SelectionValues:
    v_oracle: float
    v_random: float
    v_judge: float


def values_from_prompts(values: PromptValues) -> SelectionValues:
    return SelectionValues(
        v_oracle=float(np.mean(values.oracle_best)),
        v_random=float(np.mean(values.random)),
        v_judge=float(np.mean(values.judge)),
    )


def selection_values(ds: ScoreSource) -> SelectionValues:
    arrays = as_arrays(ds)
    arrays.require_labeled("selection_values")
    return values_from_prompts(prompt_values(arrays))


def recovery_from_values(values: SelectionValues) -> float:
    denominator = values.v_oracle - values.v_random
    if denominator == 0.0:
        raise DegenerateDenominatorError("oracle and random values coincide (every prompt's candidates are equal)")
    return (values.v_judge - values.v_random) / denominator


def recovery(ds: ScoreSource) -> float:
    return recovery_from_values(selection_values(ds))


def top1_accuracy(ds: ScoreSource) -> float:
    """PCS_n under uniform tie-breaking among the judge's maxima."""
    arrays = as_arrays(ds)
    arrays.require_labeled("top1_accuracy")
    return float(np.mean(prompt_values(arrays).pcs))


@dataclass(frozen=True)
class TieDiagnostics:
    judge_pairwise_tie_rate: float
    oracle_pairwise_tie_rate: Optional[float]
    top1_margin_tie_rate: float
    unique_judge_values: int


def tie_diagnostics(ds: ScoreSource) -> TieDiagnostics:
    arrays = as_arrays(ds)
    signs = _pair_signs(arrays)
    pairs = int(signs.valid.sum())
    judge_rate = float((signs.valid & (signs.judge == 0)).sum() / pairs)
    oracle_rate: Optional[float] = None
    if arrays.fully_labeled:
        oracle_rate = float((signs.valid & (signs.oracle == 0)).sum() / pairs)
    top_ties = argmax_tie_mask(arrays.judge, arrays.mask).sum(axis=1) >= 2
    return TieDiagnostics(
        judge_pairwise_tie_rate=judge_rate,
        oracle_pairwise_tie_rate=oracle_rate,
        top1_margin_tie_rate=float(top_ties.mean()),
        unique_judge_values=int(np.unique(arrays.judge[arrays.mask]).size),
    )


# --------------------------------------------------------------------------
# Audit bundle


@dataclass
class MetricEstimate:
    value: Optional[float] = None
    ci: Optional["IntervalEstimate"] = None
    reason: Optional[str] = None

    @property
    def defined(self) -> bool:
        return self.value is not None

    def to_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {"value": self.value}
        if self.ci is not None:
            payload["ci"] = self.ci.to_dict()
        if self.reason:
            payload["reason"] = self.reason
        return payload


METRIC_ORDER = [
    "global_r",
    "pcs_n",
    "within_r",
    "alpha",
    "p_nt",
    "p_eff",
    "mean_tau_b",
    "recovery",
    "v_oracle",
    "v_random",
    "v_judge",
    "variance_between_judge",
    "variance_within_judge",
    "variance_between_oracle",
    "variance_within_oracle",
]

METRIC_LABELS = {
    "global_r": "Global r",
    "pcs_n": "Top-1 accuracy (PCS_n)",
    "within_r": "Within-prompt r",
    "alpha": "Attenuation (alpha)",
    "p_nt": "Sign agreement (p_nt)",
    "p_eff": "Tie-adjusted agreement (p_eff)",
    "mean_tau_b": "Mean within-prompt Kendall tau-b",
    "recovery": "Recovery",
    "v_oracle": "Oracle-best value",
    "v_random": "Random value",
    "v_judge": "Judge-greedy value",
    "variance_between_judge": "Judge between-prompt variance share",
    "variance_within_judge": "Judge within-prompt variance share",
    "variance_between_oracle": "Oracle between-prompt variance share",
    "variance_within_oracle": "Oracle within-prompt variance share",
}


def _metric_functions() -> Dict[str, Callable[[ScoreArrays], float]]:
    return {
        "global_r": global_correlation,
        "pcs_n": top1_accuracy,
        "within_r": lambda a: within_correlation(decompose(a)),
        "alpha": lambda a: attenuation_slope(decompose(a)),
        "p_nt": sign_agreement,
        "p_eff": tie_adjusted_agreement,
        "mean_tau_b": lambda a: mean_kendall_tau(a).mean_tau,
        "recovery": recovery,
        "v_oracle": lambda a: selection_values(a).v_oracle,
        "v_random": lambda a: selection_values(a).v_random,
        "v_judge": lambda a: selection_values(a).v_judge,
        "variance_between_judge": lambda a: variance_decomposition(a).between_judge,
        "variance_within_judge": lambda a: variance_decomposition(a).within_judge,
        "variance_between_oracle": lambda a: variance_decomposition(a).between_oracle,
        "variance_within_oracle": lambda a: variance_decomposition(a).within_oracle,
    }


@dataclass
class AuditReport:
    metrics: Dict[str, MetricEstimate]
    selection_values: Optional[SelectionValues]
    tie_diagnostics: TieDiagnostics
    tau_skipped_prompts: Optional[int]
    covariance: Optional[CovarianceDecomposition]
    n_prompts: int
    n_records: int
    notes: List[str] = field(default_factory=list)

    def __getattr__(self, name: str) -> MetricEstimate:
        metrics = self.__dict__.get("metrics", {})
        if name in metrics:
            return metrics[name]
        raise AttributeError(name)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_prompts": self.n_prompts,
            "n_records": self.n_records,
            "metrics": {name: self.metrics[name].to_dict() for name in METRIC_ORDER},
            "tau_skipped_prompts": self.tau_skipped_prompts,
            "selection_values": None if self.selection_values is None else vars(self.selection_values),
            "tie_diagnostics": vars(self.tie_diagnostics),
            "covariance_decomposition": None if self.covariance is None else vars(self.covariance),
            "notes": list(self.notes),
        }

    def to_markdown(self) -> str:
        lines = ["| Metric | Value | 95% CI |", "|---|---:|---|"]
        for name in METRIC_ORDER:
            metric = self.metrics[name]
            value = "---" if metric.value is None else f"{metric.value:.3f}"
            if metric.ci is not None:
                ci = f"[{metric.ci.lo:.3f}, {metric.ci.hi:.3f}]"
            else:
                ci = metric.reason or "---"
            lines.append(f"| {METRIC_LABELS[name]} | {value} | {ci} |")
        ties = self.tie_diagnostics
        lines += [
            "",
            "| Tie diagnostic | Value |",
            "|---|---:|",
            f"| Judge pairwise tie rate | {ties.judge_pairwise_tie_rate:.3f} |",
            f"| Oracle pairwise tie rate | {'---' if ties.oracle_pairwise_tie_rate is None else format(ties.oracle_pairwise_tie_rate, '.3f')} |",
            f"| Top-1 margin tie rate | {ties.top1_margin_tie_rate:.3f} |",
            f"| Unique judge values | {ties.unique_judge_values} |",
        ]
        if self.tau_skipped_prompts:
            lines += ["", f"Kendall tau-b skipped {self.tau_skipped_prompts} prompt(s) with a fully tied channel."]
        if self.notes:
            lines += [""] + [f"- {note}" for note in self.notes]
        return "\n".join(lines) + "\n"


def _safe(fn: Callable[[], Any]):
    try:
        return fn(), None
    except MetricUndefinedError as exc:
        return None, str(exc)


def audit(
    ds: ScoreSource,
    bootstrap_config: Optional["BootstrapConfig"] = None,
) -> AuditReport:
    """Compute the full metric bundle; undefined metrics are reported with a reason."""
    arrays = as_arrays(ds)
    arrays.require_labeled("audit")
    functions = _metric_functions()
    metrics: Dict[str, MetricEstimate] = {}
    for name in METRIC_ORDER:
        value, reason = _safe(lambda fn=functions[name]: fn(arrays))
        metrics[name] = MetricEstimate(value=value, reason=reason)

    if bootstrap_config is not None:
        from .inference import cluster_bootstrap_many

        defined = {name: functions[name] for name in METRIC_ORDER if metrics[name].defined}
        intervals = cluster_bootstrap_many(arrays, defined, bootstrap_config)
        for name, outcome in intervals.items():
            if isinstance(outcome, MetricUndefinedError):
                metrics[name].reason = f"no interval: {outcome}"
            else:
                metrics[name].ci = outcome

    kendall, _ = _safe(lambda: mean_kendall_tau(arrays))
    values, _ = _safe(lambda: selection_values(arrays))
    covariance, _ = _safe(lambda: covariance_decomposition(arrays))
    return AuditReport(
        metrics=metrics,
        selection_values=values,
        tie_diagnostics=tie_diagnostics(arrays),
        tau_skipped_prompts=None if kendall is None else kendall.skipped,
        covariance=covariance,
        n_prompts=arrays.n_prompts,
        n_records=arrays.n_records,
        notes=[P_EFF_NOTE, COVARIATE_CALIBRATION_NOTE],
    )


# --------------------------------------------------------------------------
# Regime-mix sensitivity


@dataclass(frozen=True)
class RegimeMixPoint:
    fraction: float
    n_easy: int
    global_r: Optional[float]
    p_nt: Optional[float]
    recovery: Optional[float]


def regime_mix_sweep(
    hard: ScoreSource, easy: ScoreSource, fractions: Sequence[float]
) -> List[RegimeMixPoint]:
    """Metrics on hard prompts plus the first ceil(f * |easy|) easy prompts."""
    hard_arrays = as_arrays(hard)
    easy_arrays = as_arrays(easy)
    hard_arrays.require_labeled("regime_mix_sweep")
    easy_arrays.require_labeled("regime_mix_sweep")
    fractions = list(fractions)
    if any(not 0.0 <= f <= 1.0 for f in fractions):
        raise ConfigError("mixture fractions must lie in [0, 1]")
    if fractions != sorted(fractions):
        raise ConfigError("mixture fractions must be sorted ascending")

    points: List[RegimeMixPoint] = []
    for fraction in fractions:
        n_easy = ceil_count(fraction, easy_arrays.n_prompts)
        if n_easy:
            mixed = ScoreArrays.concat([hard_arrays, easy_arrays.take(range(n_easy))])
        else:
            mixed = hard_arrays
        points.append(
            RegimeMixPoint(
                fraction=fraction,
                n_easy=n_easy,
                global_r=_safe(lambda: global_correlation(mixed))[0],
                p_nt=_safe(lambda: sign_agreement(mixed))[0],
                recovery=_safe(lambda: recovery(mixed))[0],
            )
        )
    return points
