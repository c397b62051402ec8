"""Oracle routing under a query budget.

Each prompt contributes y1 (value of the judge's pick) unless routed to the
oracle, in which case it contributes y2 (the oracle-best value).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from ..dataset import PointwiseDataset, ScoreArrays
from ..decision_metrics import as_arrays, prompt_values
from ..errors import ConfigError, InsufficientDataError, InsufficientSamplesError
from ..utils import argmax_tie_mask, floor_count, top_two_margin

logger = logging.getLogger(__name__)

ANNOTATION_FEATURES = ("margin", "mean_level", "ci_width", "resample_std")


@dataclass(frozen=True)
class RoutedOutcome:
    prompt_id: str
    y1: float
    y2: float
    gain: float
    pcs: float
    features: Dict[str, float]


@dataclass(frozen=True, eq=False)
class RoutedOutcomes:
    """Column view of per-prompt routing outcomes; absent features are NaN."""

    prompt_ids: Tuple[str, ...]
    y1: np.ndarray
    y2: np.ndarray
    gain: np.ndarray
    pcs: np.ndarray
    features: Dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.prompt_ids)

    def __getitem__(self, index: int) -> RoutedOutcome:
        return RoutedOutcome(
            prompt_id=self.prompt_ids[index],
            y1=float(self.y1[index]),
            y2=float(self.y2[index]),
            gain=float(self.gain[index]),
            pcs=float(self.pcs[index]),
            features={
                name: float(values[index])
                for name, values in self.features.items()
                if not np.isnan(values[index])
            },
        )

    def feature(self, name: str) -> np.ndarray:
        if name not in self.features:
            raise ConfigError(f"unknown routing feature {name!r}")
        return self.features[name]

    def take(self, indices: Sequence[int]) -> "RoutedOutcomes":
        idx = np.asarray(indices, dtype=np.intp)
        return RoutedOutcomes(
            prompt_ids=tuple(self.prompt_ids[i] for i in idx),
            y1=self.y1[idx],
            y2=self.y2[idx],
            gain=self.gain[idx],
            pcs=self.pcs[idx],
            features={name: values[idx] for name, values in self.features.items()},
        )


def _group_annotation(groups, extract) -> np.ndarray:
    out = np.full(len(groups), np.nan)
    for row, group in enumerate(groups):
        values = [extract(c) for c in group.candidates]
        if all(v is not None for v in values):
            out[row] = float(np.mean(values))
    return out


def _ci_width(candidate) -> Optional[float]:
    if candidate.ci_low is None or candidate.ci_high is None:
        return None
    return candidate.ci_high - candidate.ci_low


def _resample_std(candidate) -> Optional[float]:
    samples = candidate.resample_scores
    if not samples or len(samples) < 2:
        return None
    return float(np.std(samples))


def compute_outcomes(ds: Union[PointwiseDataset, ScoreArrays]) -> RoutedOutcomes:
    arrays = as_arrays(ds)
    arrays.require_labeled("compute_outcomes")
    values = prompt_values(arrays)
    features: Dict[str, np.ndarray] = {
        "margin": top_two_margin(arrays.judge, arrays.mask),
        "mean_level": np.where(arrays.mask, arrays.judge, 0.0).sum(axis=1) / arrays.sizes,
    }
    if isinstance(ds, PointwiseDataset):
        prompt_ids = ds.prompt_ids
        features["ci_width"] = _group_annotation(ds.groups, _ci_width)
        features["resample_std"] = _group_annotation(ds.groups, _resample_std)
        names = sorted({name for record in ds.records() for name in record.features})
        for name in names:
            features[name] = _group_annotation(ds.groups, lambda c, n=name: c.features.get(n))
    else:
        digits = max(len(str(arrays.n_prompts)), 4)
        prompt_ids = tuple(f"p{row:0{digits}d}" for row in range(arrays.n_prompts))
        features["ci_width"] = np.full(arrays.n_prompts, np.nan)
        features["resample_std"] = np.full(arrays.n_prompts, np.nan)
    return RoutedOutcomes(
        prompt_ids=tuple(prompt_ids),
        y1=values.judge,
        y2=values.oracle_best,
        gain=np.maximum(values.oracle_best - values.judge, 0.0),
        pcs=values.pcs,
        features=features,
    )


# --------------------------------------------------------------------------
# Policies

POLICY_KINDS = ("random", "rank_by", "oracle_optimal")


@dataclass(frozen=True)
class RoutingPolicy:
    name: str
    kind: str
    feature: Optional[str] = None
    ascending: bool = True
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        if self.kind not in POLICY_KINDS:
            raise ConfigError(f"unknown policy kind {self.kind!r}")
        if self.kind == "rank_by" and not self.feature:
            raise ConfigError(f"policy {self.name!r} ranks by a feature but names none")

    @property
    def upper_bound(self) -> bool:
        return self.kind == "oracle_optimal"


POLICY_PRESETS: Dict[str, RoutingPolicy] = {
    "random": RoutingPolicy("random", "random"),
    "margin": RoutingPolicy("margin", "rank_by", feature="margin", ascending=True),
    "ci_width": RoutingPolicy("ci_width", "rank_by", feature="ci_width", ascending=False),
    "resample_std": RoutingPolicy("resample_std", "rank_by", feature="resample_std", ascending=False),
    "level_2d": RoutingPolicy("level_2d", "rank_by", feature="mean_level", ascending=True),
    "oracle_optimal": RoutingPolicy("oracle_optimal", "oracle_optimal"),
}


def resolve_policy(spec: Union[str, RoutingPolicy]) -> RoutingPolicy:
    """Preset name, or ``feature:NAME[:asc|desc]`` for any per-prompt feature."""
    if isinstance(spec, RoutingPolicy):
        return spec
    if spec in POLICY_PRESETS:
        return POLICY_PRESETS[spec]
    if spec.startswith("feature:"):
        parts = spec.split(":")
        direction = parts[2] if len(parts) > 2 else "asc"
        if len(parts) > 3 or direction not in ("asc", "desc"):
            raise ConfigError(f"malformed feature policy {spec!r}")
        return RoutingPolicy(spec, "rank_by", feature=parts[1], ascending=direction == "asc")
    raise ConfigError(
        f"unknown routing policy {spec!r}; presets are {', '.join(POLICY_PRESETS)}"
    )


def _id_rank(prompt_ids: Sequence[str]) -> np.ndarray:
    order = np.argsort(np.asarray(prompt_ids, dtype=object), kind="stable")
    rank = np.empty(len(prompt_ids), dtype=np.intp)
    rank[order] = np.arange(len(prompt_ids))
    return rank


def _exact_mean(values: np.ndarray) -> float:
    if values.size == 0:
        return 0.0
    if np.all(values == values[0]):
        return float(values[0])
    return float(np.mean(values))


def _selection(outcomes: RoutedOutcomes, policy: RoutingPolicy, k: int) -> np.ndarray:
    n = len(outcomes)
    if policy.kind == "random":
        order = np.random.default_rng(np.random.SeedSequence([policy.seed])).permutation(n)
    else:
        if policy.kind == "oracle_optimal":
            key = -outcomes.gain
        else:
            raw = outcomes.feature(policy.feature)  # type: ignore[arg-type]
            missing = int(np.isnan(raw).sum())
            if missing:
                raise ConfigError(
                    f"policy {policy.name!r}: feature {policy.feature!r} is absent for {missing} prompt(s)"
                )
            key = raw if policy.ascending else -raw
        order = np.lexsort((_id_rank(outcomes.prompt_ids), key))
    return order[:k]


def _routed_value(outcomes: RoutedOutcomes, selected: np.ndarray, n: int) -> float:
    gains = np.sort(outcomes.gain[selected])[::-1]
    return _exact_mean(outcomes.y1) + (selected.size / n) * _exact_mean(gains)


@dataclass(frozen=True)
class RouteResult:
    policy: str
    budget: float
    value: float
    lift: float
    pct_of_optimal: Optional[float]
    n_selected: int
    upper_bound: bool = False

    def to_row(self) -> Dict[str, Any]:
        return {
            "policy": self.policy,
            "budget": self.budget,
            "value": self.value,
            "lift": self.lift,
            "pct_of_optimal": self.pct_of_optimal,
        }


def route_value(
    outcomes: RoutedOutcomes, policy: Union[str, RoutingPolicy], budget: float
) -> RouteResult:
    """Route floor(b * n) prompts to the oracle.

    The random baseline is the exact expectation at the realized share floor(b * n) / n,
    so it differs from b * mean(y2) + (1 - b) * mean(y1) whenever b * n is not an
    integer. ``lift`` is the difference from that baseline; ``pct_of_optimal`` scales
    it by the oracle-optimal difference.
    """
    policy = resolve_policy(policy)
    if not 0.0 <= budget <= 1.0:
        raise ConfigError(f"budget must lie in [0, 1], got {budget}")
    n = len(outcomes)
    k = floor_count(budget, n)
    share = k / n
    base = _exact_mean(outcomes.y1)
    value_random = base + share * _exact_mean(np.sort(outcomes.gain)[::-1])
    value_optimal = _routed_value(outcomes, _selection(outcomes, POLICY_PRESETS["oracle_optimal"], k), n)
    if policy.kind == "random" and policy.seed is None:
        value = value_random
    else:
        value = _routed_value(outcomes, _selection(outcomes, policy, k), n)
    headroom = value_optimal - value_random
    if k == n:
        # every prompt is routed, so every policy reaches the optimum
        pct: Optional[float] = 1.0 if value_optimal > base else None
    else:
        pct = (value - value_random) / headroom if headroom != 0.0 else None
    return RouteResult(
        policy=policy.name,
        budget=budget,
        value=value,
        lift=value - value_random,
        pct_of_optimal=pct,
        n_selected=k,
        upper_bound=policy.upper_bound,
    )


def budget_sweep(
    outcomes: RoutedOutcomes,
    policies: Sequence[Union[str, RoutingPolicy]],
    budgets: Sequence[float],
) -> List[RouteResult]:
    rows = []
    for spec in policies:
        policy = resolve_policy(spec)
        for budget in budgets:
            rows.append(route_value(outcomes, policy, float(budget)))
    return rows


# --------------------------------------------------------------------------
# Gain decomposition and value-of-information checks


@dataclass(frozen=True)
class GainBin:
    low: float
    high: float
    count: int
    p_wrong: float
    gap_given_wrong: Optional[float]
    mean_gain: float


@dataclass(frozen=True)
class GainDecomposition:
    feature: str
    bins: List[GainBin]
    corr_feature_wrong: Optional[float]
    corr_feature_gain: Optional[float]
    bin_corr_feature_wrong: Optional[float]
    bin_corr_feature_gain: Optional[float]

    def to_dict(self) -> Dict[str, Any]:
        payload = dict(vars(self))
        payload["bins"] = [vars(b) for b in self.bins]
        return payload


def _corr(x: np.ndarray, y: np.ndarray) -> Optional[float]:
    if x.size < 2 or np.all(x == x[0]) or np.all(y == y[0]):
        return None
    return float(stats.pearsonr(x, y)[0])


def _equal_count_bins(values: np.ndarray, n_bins: int) -> List[np.ndarray]:
    order = np.argsort(values, kind="stable")
    return [chunk for chunk in np.array_split(order, n_bins) if chunk.size]


def gain_decomposition(
    outcomes: RoutedOutcomes, feature: str = "margin", n_bins: int = 5
) -> GainDecomposition:
    """Per equal-count feature bin: E[gain] = P(wrong) * E[gap | wrong].

    "Wrong" is 1 - PCS of the prompt, so the gap is a wrongness-weighted mean.
    """
    if n_bins < 1:
        raise ConfigError(f"n_bins must be positive, got {n_bins}")
    raw = outcomes.feature(feature)
    present = np.flatnonzero(~np.isnan(raw))
    if present.size < 2 * n_bins:
        raise InsufficientDataError(
            f"feature {feature!r} is present on {present.size} prompt(s); need {2 * n_bins}"
        )
    values = raw[present]
    wrong = 1.0 - outcomes.pcs[present]
    gain = outcomes.gain[present]

    bins: List[GainBin] = []
    for chunk in _equal_count_bins(values, n_bins):
        w = wrong[chunk]
        g = gain[chunk]
        mass = float(w.sum())
        bins.append(
            GainBin(
                low=float(values[chunk].min()),
                high=float(values[chunk].max()),
                count=int(chunk.size),
                p_wrong=mass / chunk.size,
                gap_given_wrong=float(g.sum()) / mass if mass > 0 else None,
                mean_gain=float(g.sum()) / chunk.size,
            )
        )
    centers = np.array([0.5 * (b.low + b.high) for b in bins])
    return GainDecomposition(
        feature=feature,
        bins=bins,
        corr_feature_wrong=_corr(values, wrong),
        corr_feature_gain=_corr(values, gain),
        bin_corr_feature_wrong=_corr(centers, np.array([b.p_wrong for b in bins])),
        bin_corr_feature_gain=_corr(centers, np.array([b.mean_gain for b in bins])),
    )


@dataclass(frozen=True)
class VOIReport:
    flag: Optional[str]
    corr_margin_correct: Optional[float]
    corr_margin_gain: Optional[float]
    p_correct_by_bin: List[float]
    gain_by_bin: List[float]
    p_correct_increasing: Optional[bool]
    gain_decreasing: Optional[bool]

    def to_dict(self) -> Dict[str, Any]:
        return dict(vars(self))


def voi_diagnostics(outcomes: RoutedOutcomes, n_bins: int = 5) -> VOIReport:
    """Does a confident (high-margin) judge also mean little to gain from the oracle?"""
    margin = outcomes.feature("margin")
    if np.all(margin == margin[0]):
        return VOIReport("no variance", None, None, [], [], None, None)
    correct = outcomes.pcs
    order_bins = _equal_count_bins(margin, min(n_bins, len(outcomes)))
    p_correct = [float(correct[b].mean()) for b in order_bins]
    gains = [float(outcomes.gain[b].mean()) for b in order_bins]
    return VOIReport(
        flag=None,
        corr_margin_correct=_corr(margin, correct),
        corr_margin_gain=_corr(margin, outcomes.gain),
        p_correct_by_bin=p_correct,
        gain_by_bin=gains,
        p_correct_increasing=bool(np.all(np.diff(p_correct) >= 0)),
        gain_decreasing=bool(np.all(np.diff(gains) <= 0)),
    )


# --------------------------------------------------------------------------
# Adaptive resampling


@dataclass(frozen=True)
class AdaptiveResult:
    accuracy: float
    accuracy_single: float
    accuracy_full: float
    mean_queries: float
    benefit_fraction: Optional[float]
    cost_fraction: float
    samples_per_candidate: int
    n_prompts: int

    def to_dict(self) -> Dict[str, Any]:
        return dict(vars(self))


def _resample_cube(ds: PointwiseDataset, needed: int) -> Tuple[np.ndarray, int]:
    arrays = ds.arrays
    lengths = [
        len(c.resample_scores) if c.resample_scores is not None else 0
        for c in ds.records()
    ]
    depth = min(lengths)
    if depth < needed:
        raise InsufficientSamplesError(
            f"adaptive resampling needs {needed} stored samples per candidate; "
            f"the shortest candidate has {depth}"
        )
    cube = np.full((arrays.n_prompts, arrays.width, depth), np.nan)
    for row, group in enumerate(ds.groups):
        for col, candidate in enumerate(group.candidates):
            cube[row, col] = candidate.resample_scores[:depth]  # type: ignore[index]
    return cube, depth


def _accuracy(scores: np.ndarray, arrays: ScoreArrays) -> float:
    return float(np.mean(prompt_values(arrays.with_judge(scores)).pcs))


def adaptive_resampling_sim(
    ds: PointwiseDataset, margin_threshold: float = 0.10, k_max: int = 3
) -> AdaptiveResult:
    """Resample the current top two while the top-1 margin stays below the threshold."""
    arrays = ds.arrays
    arrays.require_labeled("adaptive_resampling_sim")
    if k_max < 0:
        raise ConfigError(f"k_max must be non-negative, got {k_max}")
    cube, depth = _resample_cube(ds, k_max + 1)
    mask = arrays.mask
    rows = np.arange(arrays.n_prompts)

    counts = np.where(mask, 1, 0)
    sums = np.where(mask, cube[:, :, 0], 0.0)
    queries = arrays.sizes.astype(float)
    means = np.where(mask, sums / np.maximum(counts, 1), np.nan)
    active = top_two_margin(means, mask) < margin_threshold
    for _ in range(k_max):
        if not active.any():
            break
        ranked = np.argsort(-np.where(mask, means, -np.inf), axis=1, kind="stable")[:, :2]
        for slot in range(2):
            col = ranked[active, slot]
            act_rows = rows[active]
            sums[act_rows, col] += cube[act_rows, col, counts[act_rows, col]]
            counts[act_rows, col] += 1
        queries[active] += 2
        means = np.where(mask, sums / np.maximum(counts, 1), np.nan)
        active &= top_two_margin(means, mask) < margin_threshold

    accuracy = _accuracy(means, arrays)
    single = _accuracy(cube[:, :, 0], arrays)
    full = _accuracy(cube.mean(axis=2), arrays)
    base = float(arrays.sizes.sum())
    total = base * depth
    benefit = (accuracy - single) / (full - single) if full != single else None
    return AdaptiveResult(
        accuracy=accuracy,
        accuracy_single=single,
        accuracy_full=full,
        mean_queries=float(queries.mean()),
        benefit_fraction=benefit,
        cost_fraction=(float(queries.sum()) - base) / (total - base) if depth > 1 else 0.0,
        samples_per_candidate=depth,
        n_prompts=arrays.n_prompts,
    )
