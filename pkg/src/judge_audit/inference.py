"""Uncertainty quantification and partial-label estimation.

Prompts are the resampling and i.i.d. unit throughout: the cluster bootstrap
resamples prompt groups, and the AIPW influence terms are per prompt.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import optimize
from scipy.stats import norm, rankdata
from sklearn.linear_model import LinearRegression

from .dataset import PointwiseDataset, ScoreArrays
from .decision_metrics import (
    ScoreSource,
    as_arrays,
    prompt_values,
)
from .errors import (
    ConfigError,
    DegenerateDenominatorError,
    DegenerateInputError,
    InsufficientDataError,
    MetricUndefinedError,
    PositivityError,
    TooManySkipsError,
    UnlabeledOracleBestError,
)
from .utils import top_two_margin

logger = logging.getLogger(__name__)

QUERY_PROB_FLOOR = 1e-3
DENOMINATOR_TOLERANCE = 1e-9

Statistic = Callable[[Any], float]


def _rng(*entropy: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(entropy)))


# --------------------------------------------------------------------------
# Cluster bootstrap


@dataclass(frozen=True)
class BootstrapConfig:
    resamples: int = 1000
    seed: int = 20240601
    interval: Tuple[float, float] = (2.5, 97.5)
    max_skip_fraction: float = 0.2
    threads: int = 1

    def __post_init__(self) -> None:
        if self.resamples < 2:
            raise ConfigError(f"bootstrap resamples must be at least 2, got {self.resamples}")
        if self.seed < 0:
            raise ConfigError(f"bootstrap seed must be non-negative, got {self.seed}")
        low, high = self.interval
        if not 0.0 <= low < high <= 100.0:
            raise ConfigError(f"bootstrap interval percentiles are invalid: {self.interval}")
        if self.threads < 1:
            raise ConfigError(f"threads must be at least 1, got {self.threads}")

    @classmethod
    def from_dict(cls, settings: Dict[str, Any], threads: int = 1) -> "BootstrapConfig":
        return cls(
            resamples=int(settings.get("resamples", cls.resamples)),
            seed=int(settings.get("seed", cls.seed)),
            interval=tuple(settings.get("interval", cls.interval)),  # type: ignore[arg-type]
            max_skip_fraction=float(settings.get("max_skip_fraction", cls.max_skip_fraction)),
            threads=threads,
        )

    @property
    def z(self) -> float:
        """Normal quantile matching the configured central interval."""
        low, high = self.interval
        return float(norm.ppf(1.0 - (low + 100.0 - high) / 200.0))


@dataclass(frozen=True)
class IntervalEstimate:
    point: float
    lo: float
    hi: float
    skipped: int = 0
    method: str = "percentile"

    def to_dict(self) -> Dict[str, Any]:
        return dict(vars(self))


def _replicate_indices(n: int, seed: int, replicate: int) -> np.ndarray:
    return _rng(seed, replicate).integers(0, n, size=n)


def _resample(source: Any, indices: np.ndarray) -> Any:
    return source.take(indices)


def _run_replicates(
    source: Any, statistics: Sequence[Statistic], cfg: BootstrapConfig
) -> np.ndarray:
    n = as_arrays(source).n_prompts

    def replicate(b: int) -> List[float]:
        sample = _resample(source, _replicate_indices(n, cfg.seed, b))
        row = []
        for statistic in statistics:
            try:
                row.append(float(statistic(sample)))
            except MetricUndefinedError:
                row.append(np.nan)
        return row

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            rows = list(pool.map(replicate, range(cfg.resamples)))
    else:
        rows = [replicate(b) for b in range(cfg.resamples)]
    return np.asarray(rows, dtype=float).reshape(cfg.resamples, len(statistics))


def _percentile_interval(
    name: str, point: float, draws: np.ndarray, cfg: BootstrapConfig
) -> IntervalEstimate:
    valid = draws[~np.isnan(draws)]
    skipped = int(draws.size - valid.size)
    if skipped > cfg.max_skip_fraction * cfg.resamples:
        raise TooManySkipsError(
            f"{name}: {skipped} of {cfg.resamples} bootstrap resamples were undefined"
        )
    if skipped:
        logger.info("%s: skipped %d undefined bootstrap resample(s)", name, skipped)
    lo, hi = np.percentile(valid, cfg.interval)
    return IntervalEstimate(point=point, lo=float(lo), hi=float(hi), skipped=skipped)


def cluster_bootstrap(
    ds: Any, statistic: Statistic, cfg: Optional[BootstrapConfig] = None
) -> IntervalEstimate:
    """Percentile interval from resampling whole prompt groups with replacement."""
    cfg = cfg or BootstrapConfig()
    point = float(statistic(ds))
    draws = _run_replicates(ds, [statistic], cfg)[:, 0]
    return _percentile_interval(getattr(statistic, "__name__", "statistic"), point, draws, cfg)


def cluster_bootstrap_many(
    ds: Any, statistics: Dict[str, Statistic], cfg: Optional[BootstrapConfig] = None
) -> Dict[str, Union[IntervalEstimate, MetricUndefinedError]]:
    """Several statistics evaluated on the same resamples.

    A statistic whose interval cannot be formed maps to the error instead.
    """
    cfg = cfg or BootstrapConfig()
    names = list(statistics)
    draws = _run_replicates(ds, [statistics[name] for name in names], cfg)
    results: Dict[str, Union[IntervalEstimate, MetricUndefinedError]] = {}
    for column, name in enumerate(names):
        try:
            point = float(statistics[name](ds))
            results[name] = _percentile_interval(name, point, draws[:, column], cfg)
        except MetricUndefinedError as exc:
            results[name] = exc
    return results


# --------------------------------------------------------------------------
# Outcome models


SELECTORS = ("judge", "random", "oracle_best")

Selector = Union[str, np.ndarray]


def _selected_oracle(arrays: ScoreArrays, selector: Selector) -> np.ndarray:
    """O_delta per prompt; an array selector is a custom candidate mask."""
    if isinstance(selector, np.ndarray):
        return prompt_values(arrays, selector).judge
    values = prompt_values(arrays)
    if selector == "judge":
        return values.judge
    if selector == "random":
        return values.random
    if selector == "oracle_best":
        return values.oracle_best
    raise ConfigError(f"unknown selector {selector!r}; expected one of {', '.join(SELECTORS)}")


def _selected_judge(arrays: ScoreArrays, selector: Selector) -> np.ndarray:
    """Judge-score summary of what the selector picks: a mean for random and custom masks, else the max."""
    if isinstance(selector, np.ndarray):
        chosen = selector & arrays.mask
        return np.where(chosen, arrays.judge, 0.0).sum(axis=1) / np.maximum(chosen.sum(axis=1), 1)
    if selector == "random":
        return np.where(arrays.mask, arrays.judge, 0.0).sum(axis=1) / arrays.sizes
    return np.where(arrays.mask, arrays.judge, -np.inf).max(axis=1)


class ConstantOutcomeModel:
    """Predicts the labeled-prompt mean of the selected oracle value."""

    name = "constant"

    def __call__(self, arrays: ScoreArrays, selector: Selector) -> np.ndarray:
        target = _selected_oracle(arrays, selector)[arrays.labeled]
        if target.size == 0:
            raise InsufficientDataError("outcome model needs at least one labeled prompt")
        return np.full(arrays.n_prompts, float(target.mean()))


class JudgeLinearOutcomeModel:
    """Least squares of the selected oracle value on the selected judge score."""

    name = "judge_linear"

    def __call__(self, arrays: ScoreArrays, selector: Selector) -> np.ndarray:
        feature = _selected_judge(arrays, selector)
        target = _selected_oracle(arrays, selector)
        labeled = arrays.labeled
        x = feature[labeled]
        if x.size < 2 or np.all(x == x[0]):
            logger.debug("judge_linear: degenerate design, falling back to the labeled mean")
            return ConstantOutcomeModel()(arrays, selector)
        model = LinearRegression().fit(x.reshape(-1, 1), target[labeled])
        return model.predict(feature.reshape(-1, 1))


OUTCOME_MODELS: Dict[str, Callable[[], Any]] = {
    "constant": ConstantOutcomeModel,
    "judge_linear": JudgeLinearOutcomeModel,
}

OutcomeModel = Callable[[ScoreArrays, Selector], np.ndarray]


# --------------------------------------------------------------------------
# AIPW / doubly robust estimation


def _check_positivity(arrays: ScoreArrays) -> None:
    probs = arrays.query_prob
    bad = ~((probs > 0.0) & (probs <= 1.0))
    if bad.any():
        raise PositivityError(
            f"query_prob must lie in (0, 1]; {int(bad.sum())} prompt(s) violate this"
        )


def aipw_terms(
    ds: ScoreSource, selector: Selector, outcome_model: Optional[OutcomeModel] = None
) -> np.ndarray:
    """Per-prompt influence terms m(W) + R / pi(W) * (O_delta - m(W))."""
    arrays = as_arrays(ds)
    _check_positivity(arrays)
    labeled = arrays.labeled
    target = _selected_oracle(arrays, selector)
    if outcome_model is None:
        if isinstance(selector, str) and selector == "oracle_best" and not labeled.all():
            raise UnlabeledOracleBestError(
                "oracle_best on partially labeled data needs an outcome model"
            )
        predicted = np.zeros(arrays.n_prompts)
    else:
        predicted = np.asarray(outcome_model(arrays, selector), dtype=float)
    probs = arrays.query_prob
    observed = np.where(labeled, target, 0.0)
    augmented = predicted + (observed - predicted) / probs
    terms = np.where(labeled, augmented, predicted)
    # at pi == 1 the augmentation cancels and the labeled value is used as is
    return np.where(labeled & (probs == 1.0), observed, terms)


def aipw_value(
    ds: ScoreSource, selector: Selector = "judge", outcome_model: Optional[OutcomeModel] = None
) -> float:
    return float(np.mean(aipw_terms(ds, selector, outcome_model)))


def recovery_partials(psi0: float, psi1: float, psi2: float) -> Tuple[float, float, float]:
    """Gradient of (psi1 - psi0) / (psi2 - psi0) with respect to (psi0, psi1, psi2)."""
    denominator = psi2 - psi0
    ratio = (psi1 - psi0) / denominator
    return (
        (psi1 - psi2) / denominator ** 2,
        1.0 / denominator,
        -ratio / denominator,
    )


def effective_sample_size(ds: ScoreSource) -> float:
    """(sum w)^2 / sum w^2 over labeled prompts with w = 1 / pi."""
    arrays = as_arrays(ds)
    _check_positivity(arrays)
    weights = 1.0 / arrays.query_prob[arrays.labeled]
    if weights.size == 0:
        raise InsufficientDataError("no labeled prompts")
    return float(weights.sum() ** 2 / np.sum(weights ** 2))


@dataclass(frozen=True)
class RecoveryEstimate:
    point: float
    lo: float
    hi: float
    se: float
    psi_random: float
    psi_judge: float
    psi_oracle: float
    ess: float
    n_labeled: int
    bootstrap: Optional[IntervalEstimate] = None

    @property
    def interval(self) -> IntervalEstimate:
        return IntervalEstimate(point=self.point, lo=self.lo, hi=self.hi, method="influence")

    def to_dict(self) -> Dict[str, Any]:
        payload = dict(vars(self))
        payload["bootstrap"] = None if self.bootstrap is None else self.bootstrap.to_dict()
        return payload


def _dr_point(arrays: ScoreArrays, outcome_model: Optional[OutcomeModel]):
    phi = [aipw_terms(arrays, s, outcome_model) for s in ("random", "judge", "oracle_best")]
    psi = [float(np.mean(p)) for p in phi]
    if abs(psi[2] - psi[0]) < DENOMINATOR_TOLERANCE:
        raise DegenerateDenominatorError(
            f"estimated oracle-best and random values coincide ({psi[2]!r} vs {psi[0]!r})"
        )
    return phi, psi, (psi[1] - psi[0]) / (psi[2] - psi[0])


def dr_recovery(
    ds: ScoreSource,
    outcome_model: Optional[OutcomeModel] = None,
    cfg: Optional[BootstrapConfig] = None,
    bootstrap: bool = False,
) -> RecoveryEstimate:
    """Doubly robust recovery with a delta-method (influence function) interval."""
    arrays = as_arrays(ds)
    cfg = cfg or BootstrapConfig()
    phi, psi, point = _dr_point(arrays, outcome_model)
    partials = recovery_partials(*psi)
    influence = sum(d * (p - m) for d, p, m in zip(partials, phi, psi))
    n = arrays.n_prompts
    se = float(np.sqrt(np.mean(influence ** 2) / n)) if n > 1 else 0.0
    half = cfg.z * se
    cross_check = None
    if bootstrap:
        cross_check = cluster_bootstrap(
            arrays, lambda a: _dr_point(a, outcome_model)[2], cfg
        )
    return RecoveryEstimate(
        point=point,
        lo=point - half,
        hi=point + half,
        se=se,
        psi_random=psi[0],
        psi_judge=psi[1],
        psi_oracle=psi[2],
        ess=effective_sample_size(arrays),
        n_labeled=int(arrays.labeled.sum()),
        bootstrap=cross_check,
    )


# --------------------------------------------------------------------------
# Allocation designs


DESIGN_KINDS = ("uniform", "margin_ranked", "neyman", "custom")


@dataclass(frozen=True, eq=False)
class AllocationDesign:
    query_prob: np.ndarray
    budget: float
    kind: str = "custom"

    def __post_init__(self) -> None:
        probs = np.asarray(self.query_prob, dtype=float)
        object.__setattr__(self, "query_prob", probs)
        if self.kind not in DESIGN_KINDS:
            raise ConfigError(f"unknown design kind {self.kind!r}")
        if not ((probs > 0.0) & (probs <= 1.0)).all():
            raise PositivityError("every query probability must lie in (0, 1]")
        if probs.mean() > self.budget + 1e-9:
            raise ConfigError(
                f"design spends {probs.mean():.6f} on average, above the budget {self.budget}"
            )


def _check_budget(budget: float) -> None:
    if not 0.0 < budget <= 1.0:
        raise ConfigError(f"budget must lie in (0, 1], got {budget}")
    if budget < QUERY_PROB_FLOOR:
        raise ConfigError(f"budget {budget} is below the query probability floor {QUERY_PROB_FLOOR}")


def water_fill(weights: Sequence[float], budget: float, floor: float = QUERY_PROB_FLOOR) -> np.ndarray:
    """pi = clip(lambda * w, floor, 1) with lambda chosen so that mean pi = budget."""
    weights = np.asarray(weights, dtype=float)
    _check_budget(budget)
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ConfigError("allocation weights must be finite and non-negative")
    if not np.any(weights > 0):
        raise DegenerateInputError("all allocation weights are zero")
    if budget >= 1.0:
        return np.ones_like(weights)

    def spend(scale: float) -> float:
        return float(np.clip(scale * weights, floor, 1.0).mean()) - budget

    upper = 1.0 / weights[weights > 0].min()
    if spend(upper) < 0.0:
        logger.warning("zero-weight prompts stay at the floor; design spends below the budget %s", budget)
        return np.clip(upper * weights, floor, 1.0)
    scale = optimize.brentq(spend, 0.0, upper, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    probs = np.clip(scale * weights, floor, 1.0)
    capped = int((probs == 1.0).sum())
    floored = int((probs == floor).sum())
    if capped or floored:
        logger.info("allocation truncated: %d capped at 1, %d at the floor", capped, floored)
    return probs


def uniform_design(n_prompts: int, budget: float) -> AllocationDesign:
    _check_budget(budget)
    return AllocationDesign(np.full(n_prompts, float(budget)), budget, "uniform")


def neyman_allocation(conditional_sd: Sequence[float], budget: float) -> AllocationDesign:
    """Query probabilities proportional to the conditional sd, water-filled into (floor, 1]."""
    sd = np.asarray(conditional_sd, dtype=float)
    if sd.size and np.all(sd == 0):
        raise DegenerateInputError("all conditional standard deviations are zero")
    return AllocationDesign(water_fill(sd, budget), budget, "neyman")


def margin_ranked_design(margins: Sequence[float], budget: float) -> AllocationDesign:
    """Smaller judge margins get proportionally larger rank weights."""
    margins = np.asarray(margins, dtype=float)
    return AllocationDesign(water_fill(rankdata(-margins), budget), budget, "margin_ranked")


def custom_design(weights: Sequence[float], budget: float) -> AllocationDesign:
    return AllocationDesign(water_fill(weights, budget), budget, "custom")


def apply_design(
    ds: ScoreSource,
    design: AllocationDesign,
    seed: int = 0,
    uniforms: Optional[np.ndarray] = None,
) -> ScoreSource:
    """Hide oracle labels outside a Bernoulli(pi) draw; returns the same kind of object."""
    arrays = as_arrays(ds)
    arrays.require_labeled("apply_design")
    if design.query_prob.size != arrays.n_prompts:
        raise ConfigError(
            f"design covers {design.query_prob.size} prompts, dataset has {arrays.n_prompts}"
        )
    if uniforms is None:
        uniforms = _rng(seed).random(arrays.n_prompts)
    labeled = uniforms < design.query_prob
    if isinstance(ds, PointwiseDataset):
        return ds.with_label_mask(labeled, design.query_prob)
    return arrays.with_labels(labeled, design.query_prob)


# --------------------------------------------------------------------------
# Allocation variance study


@dataclass(frozen=True)
class AllocationStudyConfig:
    """Heteroskedastic prompts: oracle scale exp(scale_sigma * z) per prompt."""

    n_prompts: int = 400
    n_candidates: int = 4
    rho: float = 0.5
    scale_sigma: float = 1.0
    budget: float = 0.25
    outcome_model: str = "constant"


def _study_arrays(cfg: AllocationStudyConfig, rng: np.random.Generator):
    shape = (cfg.n_prompts, cfg.n_candidates)
    scale = np.exp(cfg.scale_sigma * rng.standard_normal(cfg.n_prompts))
    quality = rng.standard_normal(shape)
    noise = rng.standard_normal(shape)
    judge = cfg.rho * quality + np.sqrt(1.0 - cfg.rho ** 2) * noise
    oracle = scale[:, None] * quality
    arrays = ScoreArrays(
        judge=judge,
        oracle=oracle,
        mask=np.ones(shape, dtype=bool),
        labeled=np.ones(cfg.n_prompts, dtype=bool),
        query_prob=np.ones(cfg.n_prompts),
    )
    return arrays, scale


def _design_weights(name: str, arrays: ScoreArrays, scale: np.ndarray, rng: np.random.Generator):
    if name == "uniform":
        return np.ones(arrays.n_prompts)
    if name == "neyman":
        return scale
    if name == "margin":
        return rankdata(-top_two_margin(arrays.judge, arrays.mask))
    if name == "noise_feature":
        return rng.uniform(0.75, 1.25, arrays.n_prompts)
    raise ConfigError(f"unknown study design {name!r}; expected uniform, neyman, margin or noise_feature")


STUDY_DESIGNS = ("uniform", "neyman", "margin", "noise_feature")


@dataclass(frozen=True)
class AllocationStudyRow:
    design: str
    variance: float
    ratio_vs_uniform: float
    mean_point: float
    mean_ess: float
    skipped: int


def allocation_variance_study(
    generator_config: AllocationStudyConfig,
    designs: Sequence[str],
    trials: int = 200,
    seed: int = 0,
    threads: int = 1,
) -> List[AllocationStudyRow]:
    """Variance of the DR recovery estimate per design, relative to uniform allocation.

    Every design sees the same simulated prompts and the same uniforms within a trial.
    """
    if trials < 50:
        raise ConfigError(f"allocation study needs at least 50 trials, got {trials}")
    names = list(dict.fromkeys(["uniform", *designs]))
    model = OUTCOME_MODELS[generator_config.outcome_model]()
    budget = generator_config.budget

    def trial(t: int) -> List[Tuple[float, float]]:
        rng = _rng(seed, t)
        arrays, scale = _study_arrays(generator_config, rng)
        uniforms = rng.random(arrays.n_prompts)
        feature_rng = _rng(seed, t, 1)
        out = []
        for name in names:
            probs = water_fill(_design_weights(name, arrays, scale, feature_rng), budget)
            masked = apply_design(arrays, AllocationDesign(probs, budget), uniforms=uniforms)
            try:
                estimate = _dr_point(masked, model)[2]
                out.append((estimate, effective_sample_size(masked)))
            except MetricUndefinedError:
                out.append((np.nan, np.nan))
        return out

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(trial, range(trials)))
    else:
        results = [trial(t) for t in range(trials)]
    table = np.asarray(results, dtype=float)  # trials x designs x 2

    rows: List[AllocationStudyRow] = []
    variances = {}
    for column, name in enumerate(names):
        points = table[:, column, 0]
        valid = ~np.isnan(points)
        variances[name] = float(np.var(points[valid], ddof=1))
        rows.append(
            AllocationStudyRow(
                design=name,
                variance=variances[name],
                ratio_vs_uniform=np.nan,
                mean_point=float(points[valid].mean()),
                mean_ess=float(np.nanmean(table[:, column, 1])),
                skipped=int((~valid).sum()),
            )
        )
    baseline = variances["uniform"]
    return [
        AllocationStudyRow(
            design=row.design,
            variance=row.variance,
            ratio_vs_uniform=row.variance / baseline,
            mean_point=row.mean_point,
            mean_ess=row.mean_ess,
            skipped=row.skipped,
        )
        for row in rows
    ]
