"""Best-of-2 metrics, pointwise-derived preferences, Borda aggregation and
stated-probability calibration for pairwise judgments."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .constants import CHOICE_A, CHOICE_B, CHOICE_TIE
from .dataset import PairwiseDataset, PairwiseRecord, PointwiseDataset
from .decision_metrics import (
    SelectionValues,
    values_from_prompts,
    prompt_values,
    recovery_from_values,
)
from .errors import ConfigError, NoComparablePairsError, UnknownCandidateError

logger = logging.getLogger(__name__)


def _choice(delta: float) -> str:
    if delta > 0:
        return CHOICE_A
    if delta < 0:
        return CHOICE_B
    return CHOICE_TIE


def preferences_from_pointwise(ds: PointwiseDataset) -> PairwiseDataset:
    """One record per unordered within-prompt pair, A being the earlier candidate."""
    ds.arrays.require_labeled("preferences_from_pointwise")
    records: List[PairwiseRecord] = []
    for group in ds.groups:
        candidates = group.candidates
        for i, first in enumerate(candidates):
            for second in candidates[i + 1:]:
                records.append(
                    PairwiseRecord(
                        prompt_id=group.prompt_id,
                        candidate_a=first.candidate_id,
                        candidate_b=second.candidate_id,
                        judge_choice=_choice(first.judge_score - second.judge_score),
                        oracle_choice=_choice(first.oracle_label - second.oracle_label),
                    )
                )
    return PairwiseDataset(tuple(records))


@dataclass(frozen=True)
class PairwiseStats:
    n_records: int
    n_oracle_decided: int
    n_both_decided: int
    tie_rate: float
    agreement: Optional[float]
    p_eff: float
    recovery_bo2: float

    def to_dict(self) -> Dict[str, Any]:
        return dict(vars(self))

    def to_markdown(self) -> str:
        agreement = "---" if self.agreement is None else f"{self.agreement:.3f}"
        return "\n".join(
            [
                "| Metric | Value | N |",
                "|---|---:|---:|",
                f"| Judge tie rate | {self.tie_rate:.3f} | {self.n_records} |",
                f"| Agreement (both non-tied) | {agreement} | {self.n_both_decided} |",
                f"| Tie-adjusted agreement (p_eff) | {self.p_eff:.3f} | {self.n_oracle_decided} |",
                f"| Best-of-2 recovery | {self.recovery_bo2:.3f} | {self.n_oracle_decided} |",
            ]
        ) + "\n"


def pairwise_stats(pw: PairwiseDataset) -> PairwiseStats:
    records = pw.records
    decided = [r for r in records if r.oracle_choice != CHOICE_TIE]
    if not decided:
        raise NoComparablePairsError("no pairwise record has an oracle preference")
    judge_ties = sum(1 for r in records if r.judge_choice == CHOICE_TIE)
    agree = sum(1 for r in decided if r.judge_choice == r.oracle_choice)
    decided_ties = sum(1 for r in decided if r.judge_choice == CHOICE_TIE)
    both = len(decided) - decided_ties
    p_eff = (agree + 0.5 * decided_ties) / len(decided)
    return PairwiseStats(
        n_records=len(records),
        n_oracle_decided=len(decided),
        n_both_decided=both,
        tie_rate=judge_ties / len(records),
        agreement=agree / both if both else None,
        p_eff=p_eff,
        recovery_bo2=2.0 * p_eff - 1.0,
    )


# --------------------------------------------------------------------------
# Borda aggregation


@dataclass(frozen=True)
class BordaResult:
    scores: Dict[str, float]
    selected: tuple


def borda_select(edges: Sequence[PairwiseRecord], candidates: Sequence[str]) -> BordaResult:
    """Wins plus half-ties over incident edges; the tie set is the argmax set."""
    scores = {candidate: 0.0 for candidate in candidates}
    for edge in edges:
        for candidate in (edge.candidate_a, edge.candidate_b):
            if candidate not in scores:
                raise UnknownCandidateError(
                    f"edge on prompt {edge.prompt_id!r} references unknown candidate {candidate!r}"
                )
        if edge.judge_choice == CHOICE_A:
            scores[edge.candidate_a] += 1.0
        elif edge.judge_choice == CHOICE_B:
            scores[edge.candidate_b] += 1.0
        else:
            scores[edge.candidate_a] += 0.5
            scores[edge.candidate_b] += 0.5
    best = max(scores.values())
    return BordaResult(scores=scores, selected=tuple(c for c in candidates if scores[c] == best))


@dataclass(frozen=True)
class BordaSelection:
    values: SelectionValues
    recovery: float
    prompt_coverage: float
    round_robin_coverage: float
    n_edges: int

    def to_dict(self) -> Dict[str, Any]:
        payload = dict(vars(self))
        payload["values"] = vars(self.values)
        return payload


def bestofk_with_borda(ds: PointwiseDataset, edges: PairwiseDataset) -> BordaSelection:
    arrays = ds.arrays
    arrays.require_labeled("bestofk_with_borda")
    by_prompt = edges.by_prompt()
    known = set(ds.prompt_ids)
    for prompt_id in by_prompt:
        if prompt_id not in known:
            raise UnknownCandidateError(f"edges reference unknown prompt {prompt_id!r}")

    selection = np.zeros_like(arrays.mask)
    covered = 0
    full = 0
    for row, group in enumerate(ds.groups):
        prompt_edges = by_prompt.get(group.prompt_id, [])
        result = borda_select(prompt_edges, group.candidate_ids)
        chosen = set(result.selected)
        for col, candidate in enumerate(group.candidate_ids):
            selection[row, col] = candidate in chosen
        if prompt_edges:
            covered += 1
            pairs = {frozenset((e.candidate_a, e.candidate_b)) for e in prompt_edges}
            if len(pairs) == group.size * (group.size - 1) // 2:
                full += 1

    values = values_from_prompts(prompt_values(arrays, selection))
    return BordaSelection(
        values=values,
        recovery=recovery_from_values(values),
        prompt_coverage=covered / arrays.n_prompts,
        round_robin_coverage=full / arrays.n_prompts,
        n_edges=len(edges),
    )


# --------------------------------------------------------------------------
# Stated-probability calibration


@dataclass(frozen=True)
class CalibrationBin:
    low: float
    high: float
    count: int
    n_decided: int
    mean_stated: Optional[float]
    observed_a_rate: Optional[float]
    abs_error: Optional[float]


@dataclass(frozen=True)
class CalibrationTable:
    bins: List[CalibrationBin]
    mean_bin_error: float
    n_records: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "bins": [vars(b) for b in self.bins],
            "mean_bin_error": self.mean_bin_error,
            "n_records": self.n_records,
        }

    def to_markdown(self) -> str:
        def fmt(value: Optional[float]) -> str:
            return "---" if value is None else f"{value:.2f}"

        lines = [
            "| Bin | Mean stated P(A) | Observed A-win rate | Abs. error | N |",
            "|---|---:|---:|---:|---:|",
        ]
        for b in self.bins:
            lines.append(
                f"| [{b.low:.1f}, {b.high:.1f}] | {fmt(b.mean_stated)} | "
                f"{fmt(b.observed_a_rate)} | {fmt(b.abs_error)} | {b.count} |"
            )
        lines += ["", f"Mean bin error: {self.mean_bin_error:.3f}"]
        return "\n".join(lines) + "\n"


def confidence_calibration(pw: PairwiseDataset, bin_edges: Sequence[float]) -> CalibrationTable:
    """Bins are left-closed, the last one right-closed too."""
    edges = np.asarray(bin_edges, dtype=float)
    if edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ConfigError("bin edges must be strictly increasing with at least two values")
    stated = [r for r in pw.records if r.stated_prob_a is not None]
    probs = np.array([r.stated_prob_a for r in stated], dtype=float)
    a_won = np.array([r.oracle_choice == CHOICE_A for r in stated])
    decided = np.array([r.oracle_choice != CHOICE_TIE for r in stated], dtype=bool)
    if not decided.any():
        raise NoComparablePairsError("no record has both stated_prob_a and an oracle preference")

    index = np.searchsorted(edges, probs, side="right") - 1
    index = np.where(probs == edges[-1], edges.size - 2, index)
    inside = (index >= 0) & (index < edges.size - 1)
    if not inside.all():
        raise ConfigError(
            f"bin edges [{edges[0]:g}, {edges[-1]:g}] leave {int((~inside).sum())} stated probabilities unbinned"
        )

    bins: List[CalibrationBin] = []
    errors: List[float] = []
    for k in range(edges.size - 1):
        in_bin = inside & (index == k)
        used = in_bin & decided
        n_used = int(used.sum())
        mean_stated = observed = error = None
        if n_used:
            mean_stated = float(probs[used].mean())
            observed = float(a_won[used].mean())
            error = abs(mean_stated - observed)
            errors.append(error)
        bins.append(
            CalibrationBin(
                low=float(edges[k]),
                high=float(edges[k + 1]),
                count=int(in_bin.sum()),
                n_decided=n_used,
                mean_stated=mean_stated,
                observed_a_rate=observed,
                abs_error=error,
            )
        )
    if not errors:
        raise NoComparablePairsError("no bin holds a record with an oracle preference")
    logger.debug("calibration over %d stated probabilities in %d bins", len(stated), len(bins))
    return CalibrationTable(bins=bins, mean_bin_error=float(np.mean(errors)), n_records=len(stated))


# --------------------------------------------------------------------------
# Binary covariance decomposition


@dataclass(frozen=True)
class PreferenceCovariance:
    n_pairs: int
    n_prompts: int
    cov_total: float
    cov_between: float
    cov_within: float
    oracle_var_total: float
    oracle_var_between: float
    oracle_var_within: float

    def to_dict(self) -> Dict[str, Any]:
        return dict(vars(self))


def preference_covariance_decomposition(pw: PairwiseDataset) -> PreferenceCovariance:
    """Between/within split of Cov(J, O) and Var(O) for "A preferred" indicators."""
    used = [
        r for r in pw.records
        if r.judge_choice != CHOICE_TIE and r.oracle_choice != CHOICE_TIE
    ]
    if not used:
        raise NoComparablePairsError("no pair is untied for both judge and oracle")
    prompt_ids = sorted({r.prompt_id for r in used})
    position = {pid: i for i, pid in enumerate(prompt_ids)}
    rows = np.array([position[r.prompt_id] for r in used])
    judge = np.array([r.judge_choice == CHOICE_A for r in used], dtype=float)
    oracle = np.array([r.oracle_choice == CHOICE_A for r in used], dtype=float)

    counts = np.bincount(rows, minlength=len(prompt_ids)).astype(float)
    judge_mean = np.bincount(rows, weights=judge) / counts
    oracle_mean = np.bincount(rows, weights=oracle) / counts
    n = float(len(used))
    grand_j = judge.mean()
    grand_o = oracle.mean()
    between = float(np.dot(counts, (judge_mean - grand_j) * (oracle_mean - grand_o)) / n)
    within = float(np.sum((judge - judge_mean[rows]) * (oracle - oracle_mean[rows])) / n)
    var_between = float(np.dot(counts, (oracle_mean - grand_o) ** 2) / n)
    var_within = float(np.dot(counts, oracle_mean * (1.0 - oracle_mean)) / n)
    return PreferenceCovariance(
        n_pairs=len(used),
        n_prompts=len(prompt_ids),
        cov_total=between + within,
        cov_between=between,
        cov_within=within,
        oracle_var_total=var_between + var_within,
        oracle_var_between=var_between,
        oracle_var_within=var_within,
    )
