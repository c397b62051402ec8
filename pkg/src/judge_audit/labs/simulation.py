"""Synthetic generators and theoretical-baseline experiments."""
from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from ..dataset import PointwiseDataset, ScoreArrays
from ..decision_metrics import (
    recovery,
    tie_adjusted_agreement,
    tie_diagnostics,
    within_correlation,
    decompose,
    global_correlation,
)
from ..errors import ConfigError, InfeasibleError, MetricUndefinedError, NoBracketError

logger = logging.getLogger(__name__)

BLOCK_SIZE = 4096


@dataclass(frozen=True)
class GaussianConfig:
    rho: float = 0.5
    n_candidates: int = 4
    n_prompts: int = 5000
    seed: int = 0
    quantize_bins: Optional[int] = None
    between_sd_judge: float = 0.0
    between_sd_oracle: float = 0.0
    between_corr: float = 0.0

    def __post_init__(self) -> None:
        if not -1.0 <= self.rho <= 1.0:
            raise ConfigError(f"rho must lie in [-1, 1], got {self.rho}")
        if not -1.0 <= self.between_corr <= 1.0:
            raise ConfigError(f"between_corr must lie in [-1, 1], got {self.between_corr}")
        if self.n_candidates < 2:
            raise ConfigError(f"n_candidates must be at least 2, got {self.n_candidates}")
        if self.n_prompts < 1:
            raise ConfigError(f"n_prompts must be at least 1, got {self.n_prompts}")
        if self.quantize_bins is not None and self.quantize_bins < 2:
            raise ConfigError(f"quantize_bins must be at least 2, got {self.quantize_bins}")
        if self.between_sd_judge < 0 or self.between_sd_oracle < 0:
            raise ConfigError("between-layer standard deviations must be non-negative")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")

    @classmethod
    def from_dict(cls, settings: Dict[str, Any]) -> "GaussianConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(settings) - known
        if unknown:
            raise ConfigError(f"unknown gaussian setting(s): {', '.join(sorted(unknown))}")
        return cls(**settings)

    def replace(self, **changes: Any) -> "GaussianConfig":
        return dataclasses.replace(self, **changes)


def quantize(values: np.ndarray, bins: int) -> np.ndarray:
    """Map values to the midpoints of ``bins`` equal-width bins over their realized range."""
    values = np.asarray(values, dtype=float)
    finite = values[~np.isnan(values)]
    low, high = float(finite.min()), float(finite.max())
    if high == low:
        return values.copy()
    width = (high - low) / bins
    index = np.clip(np.floor((values - low) / width), 0, bins - 1)
    return low + (index + 0.5) * width


def _simulate_block(cfg: GaussianConfig, block: int, rows: int):
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, block]))
    shape = (rows, cfg.n_candidates)
    z_oracle = rng.standard_normal(rows)
    z_judge = rng.standard_normal(rows)
    mean_oracle = cfg.between_sd_oracle * z_oracle
    mean_judge = cfg.between_sd_judge * (
        cfg.between_corr * z_oracle + math.sqrt(1.0 - cfg.between_corr ** 2) * z_judge
    )
    oracle = rng.standard_normal(shape)
    noise = rng.standard_normal(shape)
    judge = cfg.rho * oracle + math.sqrt(1.0 - cfg.rho ** 2) * noise
    return judge + mean_judge[:, None], oracle + mean_oracle[:, None]


def simulate_arrays(cfg: GaussianConfig, threads: int = 1) -> ScoreArrays:
    """Array form of :func:`generate_gaussian`; blocks of prompts draw from (seed, block) streams."""
    starts = list(range(0, cfg.n_prompts, BLOCK_SIZE))
    sizes = [min(BLOCK_SIZE, cfg.n_prompts - start) for start in starts]

    def run(block: int):
        return _simulate_block(cfg, block, sizes[block])

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, range(len(starts))))
    else:
        parts = [run(block) for block in range(len(starts))]
    judge = np.concatenate([p[0] for p in parts])
    oracle = np.concatenate([p[1] for p in parts])
    if cfg.quantize_bins is not None:
        judge = quantize(judge, cfg.quantize_bins)
    return ScoreArrays(
        judge=judge,
        oracle=oracle,
        mask=np.ones(judge.shape, dtype=bool),
        labeled=np.ones(cfg.n_prompts, dtype=bool),
        query_prob=np.ones(cfg.n_prompts),
    )


def generate_gaussian(cfg: GaussianConfig, threads: int = 1) -> PointwiseDataset:
    arrays = simulate_arrays(cfg, threads)
    return PointwiseDataset.from_arrays(arrays.judge, arrays.oracle, unbounded=True)


def _optional(fn, arrays):
    try:
        return fn(arrays)
    except MetricUndefinedError as exc:
        logger.debug("metric undefined on simulated data: %s", exc)
        return None


# --------------------------------------------------------------------------
# Curves and sweeps


@dataclass(frozen=True)
class CurvePoint:
    rho: float
    recovery: float
    within_r: Optional[float]
    theory: float


def gaussian_recovery_curve(
    rhos: Sequence[float], cfg_base: GaussianConfig, threads: int = 1
) -> List[CurvePoint]:
    """Simulated recovery per rho; every rho reuses the base seed."""
    if cfg_base.quantize_bins is not None:
        raise ConfigError("the recovery curve is defined for continuous judge scores only")
    points = []
    for rho in rhos:
        arrays = simulate_arrays(cfg_base.replace(rho=float(rho)), threads)
        points.append(
            CurvePoint(
                rho=float(rho),
                recovery=recovery(arrays),
                within_r=_optional(lambda a: within_correlation(decompose(a)), arrays),
                theory=float(rho),
            )
        )
    return points


@dataclass(frozen=True)
class DiscretizationRow:
    bins: Optional[int]
    p_eff: float
    recovery: float
    judge_tie_rate: float

    @property
    def label(self) -> str:
        return "continuous" if self.bins is None else str(self.bins)


def discretization_sweep(
    cfg_base: GaussianConfig, bins_list: Sequence[Optional[int]], threads: int = 1
) -> List[DiscretizationRow]:
    """Quantize one fixed draw of judge scores at each setting (None = continuous)."""
    bins_list = list(bins_list)
    finite = [b for b in bins_list if b is not None]
    if any(b is None for b in bins_list[1:]):
        raise ConfigError("'continuous' may only appear first in the bins list")
    if finite != sorted(finite, reverse=True) or len(set(finite)) != len(finite):
        raise ConfigError("bins must be sorted in strictly descending order")
    base = simulate_arrays(cfg_base.replace(quantize_bins=None), threads)
    rows = []
    for bins in bins_list:
        arrays = base if bins is None else base.with_judge(quantize(base.judge, bins))
        rows.append(
            DiscretizationRow(
                bins=bins,
                p_eff=tie_adjusted_agreement(arrays),
                recovery=recovery(arrays),
                judge_tie_rate=tie_diagnostics(arrays).judge_pairwise_tie_rate,
            )
        )
    return rows


@dataclass(frozen=True)
class RequirementRow:
    target: float
    rho: float
    recovery: float
    p_eff: float
    iterations: int


def recovery_requirements(
    targets: Sequence[float],
    cfg_base: GaussianConfig,
    tol: float = 0.005,
    max_iterations: int = 40,
    threads: int = 1,
) -> List[RequirementRow]:
    """Bisection on rho until the simulated recovery is within ``tol`` of each target."""
    cache: Dict[float, ScoreArrays] = {}

    def at(rho: float) -> ScoreArrays:
        if rho not in cache:
            cache[rho] = simulate_arrays(cfg_base.replace(rho=rho), threads)
        return cache[rho]

    ceiling = recovery(at(1.0))
    rows = []
    for target in targets:
        if not 0.0 < target < 1.0:
            raise NoBracketError(f"target recovery {target} lies outside (0, 1)")
        if ceiling < target - tol:
            raise NoBracketError(
                f"target recovery {target} is unreachable: recovery at rho=1 is {ceiling:.4f}"
            )
        low, high = 0.0, 1.0
        rho, achieved = 1.0, ceiling
        iterations = 0
        while iterations < max_iterations:
            iterations += 1
            rho = 0.5 * (low + high)
            achieved = recovery(at(rho))
            if abs(achieved - target) <= tol:
                break
            if achieved < target:
                low = rho
            else:
                high = rho
        else:
            logger.warning("target %s: bisection stopped after %d iterations", target, iterations)
        rows.append(
            RequirementRow(
                target=float(target),
                rho=rho,
                recovery=achieved,
                p_eff=tie_adjusted_agreement(at(rho)),
                iterations=iterations,
            )
        )
    return rows


# --------------------------------------------------------------------------
# Non-identifiability


@dataclass(frozen=True)
class RealizedStats:
    global_r: float
    within_r: Optional[float]
    recovery: float


@dataclass(frozen=True)
class DGPPair:
    config_1: GaussianConfig
    config_2: GaussianConfig
    stats_1: RealizedStats
    stats_2: RealizedStats
    between_share: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "between_share": self.between_share,
            "config_1": dataclasses.asdict(self.config_1),
            "config_2": dataclasses.asdict(self.config_2),
            "stats_1": dataclasses.asdict(self.stats_1),
            "stats_2": dataclasses.asdict(self.stats_2),
        }


def _between_layer(target_r: float, rho: float, share: float, cfg_base: GaussianConfig) -> GaussianConfig:
    between_corr = (target_r - (1.0 - share) * rho) / share
    if abs(between_corr) > 1.0:
        raise InfeasibleError(
            f"global r {target_r} with within correlation {rho} needs between_corr "
            f"{between_corr:.4f} at between share {share}"
        )
    sd = math.sqrt(share / (1.0 - share))
    return cfg_base.replace(
        rho=rho,
        between_sd_judge=sd,
        between_sd_oracle=sd,
        between_corr=between_corr,
        quantize_bins=None,
    )


def _realized(cfg: GaussianConfig, threads: int) -> RealizedStats:
    arrays = simulate_arrays(cfg, threads)
    return RealizedStats(
        global_r=global_correlation(arrays),
        within_r=_optional(lambda a: within_correlation(decompose(a)), arrays),
        recovery=recovery(arrays),
    )


def nonidentifiability_pair(
    target_r: float,
    rho_within_1: float,
    rho_within_2: float,
    cfg_base: GaussianConfig,
    between_share: Optional[float] = None,
    threads: int = 1,
) -> DGPPair:
    """Two DGPs with the same population global r and different within-prompt correlation.

    Within-prompt variance is 1 in both channels and the between layer has the same
    sd in both, so the between share w gives r = w * between_corr + (1 - w) * rho.
    """
    if not 0.0 < target_r < 1.0:
        raise ConfigError(f"target_r must lie in (0, 1), got {target_r}")
    if rho_within_1 > rho_within_2:
        raise ConfigError("rho_within_1 must not exceed rho_within_2")
    share = target_r if between_share is None else between_share
    if not 0.0 < share < 1.0:
        raise ConfigError(f"between share must lie in (0, 1), got {share}")
    config_1 = _between_layer(target_r, rho_within_1, share, cfg_base)
    config_2 = _between_layer(target_r, rho_within_2, share, cfg_base)
    return DGPPair(
        config_1=config_1,
        config_2=config_2,
        stats_1=_realized(config_1, threads),
        stats_2=_realized(config_2, threads),
        between_share=share,
    )


# --------------------------------------------------------------------------
# Regime mixture

REGIMES = ("easy", "hard", "ambiguous")


@dataclass(frozen=True)
class RegimeMixtureConfig:
    """Easy prompts have a clear winner the judge sees; hard prompts have a judge
    latched onto an unrelated heuristic with large margins; ambiguous prompts are
    near-tied for the judge."""

    n_prompts: int = 3000
    n_candidates: int = 4
    easy_fraction: float = 0.4
    hard_fraction: float = 0.3
    seed: int = 0
    winner_bonus: float = 2.0
    easy_noise: float = 0.2
    hard_judge_scale: float = 10.0
    ambiguous_oracle_sd: float = 0.5
    ambiguous_judge_sd: float = 0.05

    def __post_init__(self) -> None:
        if self.easy_fraction < 0 or self.hard_fraction < 0 or self.easy_fraction + self.hard_fraction > 1:
            raise ConfigError("regime fractions must be non-negative and sum to at most 1")
        if self.n_candidates < 2 or self.n_prompts < 1:
            raise ConfigError("regime mixture needs n_candidates >= 2 and n_prompts >= 1")


@dataclass(frozen=True, eq=False)
class RegimeMixture:
    arrays: ScoreArrays
    regime: np.ndarray

    def subset(self, name: str) -> ScoreArrays:
        if name not in REGIMES:
            raise ConfigError(f"unknown regime {name!r}")
        return self.arrays.take(np.flatnonzero(self.regime == name))


def generate_regime_mixture(cfg: RegimeMixtureConfig) -> RegimeMixture:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed]))
    n, k = cfg.n_prompts, cfg.n_candidates
    n_easy = int(round(cfg.easy_fraction * n))
    n_hard = int(round(cfg.hard_fraction * n))
    regime = np.array(["easy"] * n_easy + ["hard"] * n_hard + ["ambiguous"] * (n - n_easy - n_hard))

    oracle = rng.standard_normal((n, k))
    judge = np.empty((n, k))

    easy = regime == "easy"
    winner = rng.integers(0, k, size=n)
    oracle[easy, winner[easy]] += cfg.winner_bonus
    judge[easy] = oracle[easy] + cfg.easy_noise * rng.standard_normal((n_easy, k))

    hard = regime == "hard"
    judge[hard] = cfg.hard_judge_scale * rng.standard_normal((n_hard, k))

    ambiguous = regime == "ambiguous"
    oracle[ambiguous] *= cfg.ambiguous_oracle_sd
    judge[ambiguous] = cfg.ambiguous_judge_sd * rng.standard_normal((int(ambiguous.sum()), k))

    arrays = ScoreArrays(
        judge=judge,
        oracle=oracle,
        mask=np.ones((n, k), dtype=bool),
        labeled=np.ones(n, dtype=bool),
        query_prob=np.ones(n),
    )
    return RegimeMixture(arrays=arrays, regime=regime)
