from __future__ import annotations

import numpy as np
import pytest

from judge_audit.dataset import PointwiseDataset, load_pointwise
from judge_audit.errors import ConfigError, InsufficientDataError, InsufficientSamplesError, UnlabeledError
from judge_audit.labs.routing import (
    POLICY_PRESETS,
    RoutedOutcomes,
    RoutingPolicy,
    adaptive_resampling_sim,
    budget_sweep,
    compute_outcomes,
    gain_decomposition,
    resolve_policy,
    route_value,
    voi_diagnostics,
)
from judge_audit.labs.simulation import RegimeMixtureConfig, generate_regime_mixture

from conftest import random_dataset


def _outcomes(y1, y2, pcs, margin):
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    return RoutedOutcomes(
        prompt_ids=tuple(f"q{i}" for i in range(y1.size)),
        y1=y1,
        y2=y2,
        gain=y2 - y1,
        pcs=np.asarray(pcs, dtype=float),
        features={"margin": np.asarray(margin, dtype=float)},
    )


def test_outcomes_of_tied_prompt(d2):
    outcome = compute_outcomes(d2)[0]
    assert outcome.y1 == pytest.approx(0.7425, abs=1e-12)
    assert outcome.y2 == 0.9
    assert outcome.gain == pytest.approx(0.1575, abs=1e-12)
    assert outcome.features["margin"] == 0.0
    assert outcome.pcs == 0.25


def test_outcomes_of_wrong_pick(d1):
    outcome = compute_outcomes(d1)[1]
    assert (outcome.y1, outcome.y2, outcome.gain) == (0.0, 1.0, 1.0)
    assert outcome.features["margin"] == pytest.approx(0.2)
    assert "ci_width" not in outcome.features


def test_outcomes_need_labels(d1):
    partial = d1.with_label_mask(np.array([True, False]), np.array([0.5, 0.5]))
    with pytest.raises(UnlabeledError):
        compute_outcomes(partial)


def test_outcomes_carry_record_features(write_jsonl):
    rows = [
        {"prompt_id": "a", "candidate_id": "1", "judge_score": 0.3, "oracle_label": 0.1, "features": {"length": 100}},
        {"prompt_id": "a", "candidate_id": "2", "judge_score": 0.4, "oracle_label": 0.2, "features": {"length": 300}},
    ]
    outcomes = compute_outcomes(load_pointwise(write_jsonl(rows)))
    assert outcomes.feature("length")[0] == 200.0


def test_half_budget_routes_the_largest_gain():
    outcomes = _outcomes([0.0, 0.7425], [1.0, 0.9], [0.0, 0.25], [0.2, 0.0])
    optimal = route_value(outcomes, "oracle_optimal", 0.5)
    assert optimal.n_selected == 1
    assert optimal.value == pytest.approx(0.87125)
    assert optimal.pct_of_optimal == pytest.approx(1.0)
    assert optimal.upper_bound

    by_margin = route_value(outcomes, "margin", 0.5)
    assert by_margin.value == pytest.approx(0.45)
    assert by_margin.pct_of_optimal < 0.0


def test_random_baseline_uses_the_realized_share():
    outcomes = _outcomes([-2.0, -1.0, -3.0], [-1.0, 0.0, -2.5], [0.0] * 3, [0.1, 0.2, 0.3])
    random = route_value(outcomes, "random", 0.5)
    assert random.n_selected == 1
    assert random.value == pytest.approx(-2.0 + (2.5 / 3) / 3)
    assert random.lift == 0.0

    optimal = route_value(outcomes, "oracle_optimal", 0.5)
    assert optimal.value == pytest.approx(-5 / 3)
    assert optimal.lift == pytest.approx(optimal.value - random.value)
    assert optimal.lift > 0.0


def test_budget_endpoints(d1):
    outcomes = compute_outcomes(d1)
    for name in ("random", "margin", "level_2d", "oracle_optimal"):
        none = route_value(outcomes, name, 0.0)
        assert none.value == 0.5
        assert none.lift == 0.0
        assert none.pct_of_optimal is None
        every = route_value(outcomes, name, 1.0)
        assert every.value == 1.0
        assert every.pct_of_optimal == 1.0


def test_optimal_dominates_and_values_grow_with_budget():
    rng = np.random.default_rng(10)
    budgets = [0.0, 0.1, 0.25, 0.5, 0.75, 1.0]
    for _ in range(20):
        outcomes = compute_outcomes(random_dataset(rng, n_prompts=40, levels=3))
        rows = budget_sweep(
            outcomes, ["random", "margin", "level_2d", RoutingPolicy("shuffled", "random", seed=1), "oracle_optimal"], budgets
        )
        by_policy = {}
        for row in rows:
            by_policy.setdefault(row.policy, []).append(row.value)
        for values in by_policy.values():
            assert all(later >= earlier - 1e-12 for earlier, later in zip(values, values[1:]))
        for name, values in by_policy.items():
            assert all(best >= v - 1e-12 for best, v in zip(by_policy["oracle_optimal"], values)), name


def test_constant_gain_makes_every_policy_random():
    outcomes = _outcomes([0.0, 0.5, 0.25, 0.75], [0.25, 0.75, 0.5, 1.0], [0.5] * 4, [0.3, 0.1, 0.4, 0.2])
    for budget in (0.25, 0.5, 0.75):
        reference = route_value(outcomes, "random", budget).value
        for spec in ("margin", "feature:margin:desc", "oracle_optimal", POLICY_PRESETS["oracle_optimal"]):
            result = route_value(outcomes, spec, budget)
            assert result.value == reference
            assert result.pct_of_optimal is None


def test_missing_feature_is_an_error(d1):
    with pytest.raises(ConfigError, match="absent"):
        route_value(compute_outcomes(d1), "ci_width", 0.5)


def test_resolve_policy():
    policy = resolve_policy("feature:length:desc")
    assert (policy.kind, policy.feature, policy.ascending) == ("rank_by", "length", False)
    assert resolve_policy("feature:length").ascending
    with pytest.raises(ConfigError):
        resolve_policy("feature:length:sideways")
    with pytest.raises(ConfigError):
        resolve_policy("clairvoyant")
    with pytest.raises(ConfigError):
        RoutingPolicy("bad", "rank_by")


def test_budget_outside_unit_interval(d1):
    with pytest.raises(ConfigError):
        route_value(compute_outcomes(d1), "random", 1.5)


def test_gain_decomposition_identity():
    rng = np.random.default_rng(12)
    for _ in range(100):
        outcomes = compute_outcomes(random_dataset(rng, n_prompts=60, levels=3))
        decomposition = gain_decomposition(outcomes, "margin", 4)
        assert sum(b.count for b in decomposition.bins) == 60
        for b in decomposition.bins:
            if b.gap_given_wrong is None:
                assert b.mean_gain == 0.0
            else:
                assert b.mean_gain == pytest.approx(b.p_wrong * b.gap_given_wrong, rel=1e-12)
        total = sum(b.count * b.mean_gain for b in decomposition.bins) / 60
        assert total == pytest.approx(outcomes.gain.mean(), rel=1e-12)


def test_gain_decomposition_when_judge_is_always_right():
    scores = np.random.default_rng(13).random((20, 3))
    outcomes = compute_outcomes(PointwiseDataset.from_arrays(scores, scores))
    for b in gain_decomposition(outcomes, "margin", 4).bins:
        assert b.p_wrong == 0.0
        assert b.gap_given_wrong is None
        assert b.mean_gain == 0.0


def test_gain_decomposition_needs_enough_prompts(d1):
    with pytest.raises(InsufficientDataError):
        gain_decomposition(compute_outcomes(d1), "margin", 5)
    with pytest.raises(InsufficientDataError):
        gain_decomposition(compute_outcomes(d1), "ci_width", 1)


def test_gain_is_u_shaped_in_margin_on_regime_mixture():
    mixture = generate_regime_mixture(RegimeMixtureConfig(n_prompts=3000, seed=2))
    bins = gain_decomposition(compute_outcomes(mixture.arrays), "margin", 3).bins
    low, middle, high = (b.mean_gain for b in bins)
    assert middle < low
    assert middle < high


def test_voi_without_margin_variance(d2):
    report = voi_diagnostics(compute_outcomes(d2))
    assert report.flag == "no variance"
    assert report.corr_margin_gain is None


def test_voi_when_judge_matches_oracle():
    scores = np.random.default_rng(14).random((30, 3))
    report = voi_diagnostics(compute_outcomes(PointwiseDataset.from_arrays(scores, scores)))
    assert report.flag is None
    assert report.corr_margin_correct is None
    assert report.corr_margin_gain is None


def test_voi_confident_judge_leaves_little_to_gain():
    rng = np.random.default_rng(15)
    margin = rng.random(2000)
    correct = (rng.random(2000) < margin).astype(float)
    gain = (1.0 - correct) * (1.0 + margin)
    outcomes = _outcomes(np.zeros(2000), gain, correct, margin)
    report = voi_diagnostics(outcomes)
    assert report.corr_margin_correct > 0.0
    assert report.corr_margin_gain < 0.0
    assert report.p_correct_increasing
    assert report.gain_decreasing


def _resampled_rows(samples_by_prompt):
    rows = []
    for p, (samples, labels) in enumerate(samples_by_prompt, start=1):
        for c, (resamples, label) in enumerate(zip(samples, labels), start=1):
            rows.append(
                {
                    "prompt_id": f"p{p}",
                    "candidate_id": f"c{c}",
                    "judge_score": resamples[0],
                    "oracle_label": label,
                    "resample_scores": resamples,
                }
            )
    return rows


def test_adaptive_resampling_fixes_a_close_call(write_jsonl):
    ds = load_pointwise(
        write_jsonl(
            _resampled_rows(
                [
                    ([[0.5, 0.9, 0.9, 0.9], [0.55, 0.3, 0.3, 0.3]], [1.0, 0.0]),
                    ([[0.9, 0.9, 0.9, 0.9], [0.1, 0.1, 0.1, 0.1]], [1.0, 0.0]),
                ]
            )
        )
    )
    result = adaptive_resampling_sim(ds, margin_threshold=0.1, k_max=3)
    assert result.accuracy_single == 0.5
    assert result.accuracy == 1.0
    assert result.accuracy_full == 1.0
    assert result.benefit_fraction == 1.0
    assert result.mean_queries == 3.0
    assert result.cost_fraction == pytest.approx(1 / 6)
    assert result.samples_per_candidate == 4


def test_adaptive_with_zero_threshold_is_single_pass(write_jsonl):
    ds = load_pointwise(
        write_jsonl(_resampled_rows([([[0.5, 0.9, 0.9, 0.9], [0.55, 0.3, 0.3, 0.3]], [1.0, 0.0])]))
    )
    result = adaptive_resampling_sim(ds, margin_threshold=0.0, k_max=3)
    assert result.accuracy == result.accuracy_single
    assert result.mean_queries == 2.0
    assert result.cost_fraction == 0.0


def test_adaptive_needs_stored_samples(write_jsonl):
    ds = load_pointwise(write_jsonl(_resampled_rows([([[0.5, 0.9], [0.55, 0.3]], [1.0, 0.0])])))
    with pytest.raises(InsufficientSamplesError):
        adaptive_resampling_sim(ds, k_max=3)
