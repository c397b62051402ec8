from __future__ import annotations

import numpy as np
import pytest

from judge_audit.dataset import PairwiseDataset, PairwiseRecord, PointwiseDataset
from judge_audit.decision_metrics import tie_adjusted_agreement
from judge_audit.errors import ConfigError, NoComparablePairsError, UnknownCandidateError
from judge_audit.pairwise_audit import (
    bestofk_with_borda,
    borda_select,
    confidence_calibration,
    pairwise_stats,
    preference_covariance_decomposition,
    preferences_from_pointwise,
)

from conftest import random_dataset


def _pairs(*choices, prompt="p1", stated=None):
    records = []
    for i, (judge, oracle) in enumerate(choices):
        records.append(
            PairwiseRecord(
                prompt_id=prompt,
                candidate_a=f"a{i}",
                candidate_b=f"b{i}",
                judge_choice=judge,
                oracle_choice=oracle,
                stated_prob_a=None if stated is None else stated[i],
            )
        )
    return PairwiseDataset(tuple(records))


def test_preferences_from_pointwise(d1, d2):
    pw = preferences_from_pointwise(d1)
    first = pw.records[0]
    assert (first.judge_choice, first.oracle_choice) == ("A", "A")
    assert len(pw) == 2

    tied = preferences_from_pointwise(d2)
    assert len(tied) == 6
    assert {r.judge_choice for r in tied.records} == {"TIE"}


def test_equal_oracle_labels_give_oracle_tie():
    ds = PointwiseDataset.from_arrays(np.array([[0.2, 0.4]]), np.array([[0.5, 0.5]]))
    assert preferences_from_pointwise(ds).records[0].oracle_choice == "TIE"


def test_all_agree():
    stats = pairwise_stats(_pairs(("A", "A"), ("B", "B"), ("A", "A")))
    assert stats.agreement == 1.0
    assert stats.p_eff == 1.0
    assert stats.recovery_bo2 == 1.0


def test_all_judge_ties():
    stats = pairwise_stats(_pairs(("TIE", "A"), ("TIE", "B")))
    assert stats.p_eff == 0.5
    assert stats.recovery_bo2 == 0.0
    assert stats.agreement is None
    assert stats.tie_rate == 1.0


def test_mixed_agreement():
    stats = pairwise_stats(_pairs(("A", "A"), ("B", "B"), ("A", "B"), ("TIE", "A")))
    assert stats.p_eff == 0.625
    assert stats.recovery_bo2 == 0.25
    assert stats.agreement == pytest.approx(2 / 3)
    assert stats.n_both_decided == 3


def test_no_oracle_preference():
    with pytest.raises(NoComparablePairsError):
        pairwise_stats(_pairs(("A", "TIE")))


def test_bo2_recovery_identity_on_random_sets():
    rng = np.random.default_rng(17)
    options = np.array(["A", "B", "TIE"])
    for _ in range(1000):
        n = int(rng.integers(1, 12))
        judge = options[rng.integers(0, 3, n)]
        oracle = options[rng.integers(0, 2, n)]
        stats = pairwise_stats(_pairs(*zip(judge, oracle)))
        assert stats.recovery_bo2 == 2 * stats.p_eff - 1


def test_published_row_convention():
    # an agreement rate of 0.806 maps to a best-of-2 recovery of 0.612
    assert 2 * 0.806 - 1 == pytest.approx(0.612)


def test_p_eff_matches_pointwise_tie_adjusted_agreement():
    rng = np.random.default_rng(18)
    for _ in range(200):
        ds = random_dataset(
            rng,
            n_prompts=int(rng.integers(1, 15)),
            n_candidates=int(rng.integers(2, 6)),
            levels=int(rng.integers(1, 5)),
        )
        assert pairwise_stats(preferences_from_pointwise(ds)).p_eff == tie_adjusted_agreement(ds)


def _edge(a, b, choice, prompt="p"):
    return PairwiseRecord(prompt, a, b, choice, "TIE")


def test_borda_single_edge():
    result = borda_select([_edge("A", "B", "A")], ["A", "B"])
    assert result.selected == ("A",)


def test_borda_round_robin_total_order():
    order = ["a", "b", "c", "d"]
    edges = [_edge(x, y, "A") for i, x in enumerate(order) for y in order[i + 1:]]
    result = borda_select(edges, order)
    assert [result.scores[c] for c in order] == [3.0, 2.0, 1.0, 0.0]
    assert result.selected == ("a",)


def test_borda_cycle_ties():
    edges = [_edge("a", "b", "A"), _edge("b", "c", "A"), _edge("c", "a", "A")]
    result = borda_select(edges, ["a", "b", "c"])
    assert set(result.selected) == {"a", "b", "c"}


def test_borda_scores_follow_candidate_relabeling():
    rng = np.random.default_rng(19)
    names = ["a", "b", "c", "d", "e"]
    options = ["A", "B", "TIE"]
    for _ in range(100):
        edges = [
            _edge(x, y, options[int(rng.integers(0, 3))])
            for i, x in enumerate(names)
            for y in names[i + 1:]
            if rng.random() < 0.7
        ]
        rename = dict(zip(names, (names[k] for k in rng.permutation(len(names)))))
        relabeled = [_edge(rename[e.candidate_a], rename[e.candidate_b], e.judge_choice) for e in edges]
        original = borda_select(edges, names)
        moved = borda_select(relabeled, names)
        assert {rename[c]: score for c, score in original.scores.items()} == moved.scores
        assert {rename[c] for c in original.selected} == set(moved.selected)


def test_borda_unknown_candidate():
    with pytest.raises(UnknownCandidateError):
        borda_select([_edge("a", "z", "A")], ["a", "b"])


def test_bestofk_with_oracle_edges_recovers_fully(d1):
    edges = preferences_from_pointwise(d1)
    oracle_edges = PairwiseDataset(
        tuple(
            PairwiseRecord(r.prompt_id, r.candidate_a, r.candidate_b, r.oracle_choice, r.oracle_choice)
            for r in edges.records
        )
    )
    selection = bestofk_with_borda(d1, oracle_edges)
    assert selection.recovery == 1.0
    assert selection.round_robin_coverage == 1.0


def test_bestofk_without_edges(d1):
    selection = bestofk_with_borda(d1, PairwiseDataset(()))
    assert selection.recovery == 0.0
    assert selection.prompt_coverage == 0.0


def test_bestofk_partial_edges(d1):
    first_prompt = d1.prompt_ids[0]
    edges = PairwiseDataset((PairwiseRecord(first_prompt, "c1", "c2", "A", "A"),))
    selection = bestofk_with_borda(d1, edges)
    assert selection.values.v_judge == 0.75
    assert selection.recovery == 0.5
    assert selection.prompt_coverage == 0.5


def test_bestofk_unknown_prompt(d1):
    edges = PairwiseDataset((PairwiseRecord("nowhere", "c1", "c2", "A", "A"),))
    with pytest.raises(UnknownCandidateError):
        bestofk_with_borda(d1, edges)


def test_confidence_calibration_bin_error():
    choices = [("A", "A")] * 19 + [("A", "B")] * 6
    pw = _pairs(*choices, stated=[0.88] * 25)
    table = confidence_calibration(pw, [0.0, 0.2, 0.4, 0.6, 0.8, 1.0])
    top = table.bins[-1]
    assert top.count == 25
    assert top.observed_a_rate == 0.76
    assert top.abs_error == pytest.approx(0.12)
    assert table.mean_bin_error == pytest.approx(0.12)


def test_confidence_calibration_last_bin_is_closed():
    pw = _pairs(("A", "A"), ("A", "A"), stated=[1.0, 1.0])
    table = confidence_calibration(pw, [0.0, 0.5, 1.0])
    assert table.bins[-1].count == 2
    assert table.bins[-1].abs_error == 0.0


def test_confidence_calibration_rejects_bad_edges():
    pw = _pairs(("A", "A"), stated=[0.3])
    with pytest.raises(ConfigError):
        confidence_calibration(pw, [0.0, 0.5, 0.5, 1.0])


def test_confidence_calibration_rejects_edges_that_miss_stated_probabilities():
    pw = _pairs(("A", "A"), ("A", "B"), stated=[0.3, 0.2])
    with pytest.raises(ConfigError, match="unbinned"):
        confidence_calibration(pw, [0.6, 0.8, 1.0])


def test_confidence_calibration_needs_an_oracle_preference():
    pw = _pairs(("A", "TIE"), ("B", "TIE"), stated=[0.3, 0.7])
    with pytest.raises(NoComparablePairsError):
        confidence_calibration(pw, [0.0, 0.5, 1.0])


@pytest.mark.slow
def test_confidence_calibration_of_calibrated_judge():
    rng = np.random.default_rng(12)
    probs = rng.random(10_000)
    wins = rng.random(10_000) < probs
    choices = [("A", "A" if win else "B") for win in wins]
    table = confidence_calibration(_pairs(*choices, stated=list(probs)), [0.0, 0.2, 0.4, 0.6, 0.8, 1.0])
    assert table.mean_bin_error < 0.03


def test_preference_covariance_decomposition():
    records = (
        PairwiseRecord("p1", "a", "b", "A", "A"),
        PairwiseRecord("p1", "a", "c", "B", "A"),
        PairwiseRecord("p2", "a", "b", "B", "B"),
        PairwiseRecord("p2", "b", "c", "A", "B"),
        PairwiseRecord("p2", "a", "c", "TIE", "A"),
    )
    cov = preference_covariance_decomposition(PairwiseDataset(records))
    judge = np.array([1.0, 0.0, 0.0, 1.0])
    oracle = np.array([1.0, 1.0, 0.0, 0.0])
    assert cov.n_pairs == 4
    assert cov.cov_total == pytest.approx(np.mean((judge - judge.mean()) * (oracle - oracle.mean())))
    assert cov.oracle_var_total == pytest.approx(oracle.var())
    assert cov.oracle_var_within == 0.0
