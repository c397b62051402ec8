from __future__ import annotations

import numpy as np
import pytest

from judge_audit.constants import PAIRWISE_FIELDS, POINTWISE_FIELDS
from judge_audit.dataset import (
    PairwiseDataset,
    PairwiseRecord,
    dump_pairwise,
    dump_pointwise,
    load_pairwise,
    load_pointwise,
)
from judge_audit.errors import MixedScaleError, ParseError, ValidationError

from conftest import D1_JUDGE, D1_ORACLE


def test_load_pointwise_groups_d1(write_jsonl, d1_records):
    ds = load_pointwise(write_jsonl(d1_records))

    assert ds.n_prompts == 2
    assert ds.n_records == 4
    assert ds.n_per_prompt == 2
    assert ds.prompt_ids == ("p1", "p2")
    assert ds.arrays.fully_labeled
    np.testing.assert_array_equal(ds.arrays.judge, D1_JUDGE)
    np.testing.assert_array_equal(ds.arrays.oracle, D1_ORACLE)
    np.testing.assert_array_equal(ds.arrays.query_prob, [1.0, 1.0])


def test_single_candidate_group_is_rejected(write_jsonl):
    rows = [
        {"prompt_id": "a", "candidate_id": "1", "judge_score": 0.3, "oracle_label": 0.1},
        {"prompt_id": "a", "candidate_id": "2", "judge_score": 0.4, "oracle_label": 0.2},
        {"prompt_id": "b", "candidate_id": "1", "judge_score": 0.5, "oracle_label": 0.3},
    ]
    with pytest.raises(ValidationError, match="single candidate"):
        load_pointwise(write_jsonl(rows))


def test_mixed_scale_is_rejected(write_jsonl):
    rows = [
        {"prompt_id": "a", "candidate_id": "1", "judge_score": 85, "oracle_label": 0.1},
        {"prompt_id": "a", "candidate_id": "2", "judge_score": 0.85, "oracle_label": 0.2},
    ]
    with pytest.raises(MixedScaleError):
        load_pointwise(write_jsonl(rows))


def test_percent_scale_is_rescaled(write_jsonl):
    rows = [
        {"prompt_id": "a", "candidate_id": "1", "judge_score": 85, "oracle_label": 0.1, "ci_low": 80, "ci_high": 90},
        {"prompt_id": "a", "candidate_id": "2", "judge_score": 40, "oracle_label": 0.2, "ci_low": 30, "ci_high": 50},
        {"prompt_id": "b", "candidate_id": "1", "judge_score": 0, "oracle_label": 0.3},
        {"prompt_id": "b", "candidate_id": "2", "judge_score": 100, "oracle_label": 0.4},
    ]
    ds = load_pointwise(write_jsonl(rows))

    first = ds.group("a").candidates[0]
    assert first.judge_score == pytest.approx(0.85)
    assert first.ci_low == pytest.approx(0.80)
    assert ds.group("b").candidates[1].judge_score == 1.0


def test_out_of_range_oracle_label(write_jsonl):
    rows = [
        {"prompt_id": "a", "candidate_id": "1", "judge_score": 0.3, "oracle_label": 1.2},
        {"prompt_id": "a", "candidate_id": "2", "judge_score": 0.4, "oracle_label": 0.2},
    ]
    with pytest.raises(ValidationError, match="outside"):
        load_pointwise(write_jsonl(rows))


def test_unbounded_accepts_simulated_scores(write_jsonl):
    rows = [
        {"prompt_id": "a", "candidate_id": "1", "judge_score": -1.7, "oracle_label": 2.5},
        {"prompt_id": "a", "candidate_id": "2", "judge_score": 3.1, "oracle_label": -0.4},
    ]
    ds = load_pointwise(write_jsonl(rows), unbounded=True)
    assert ds.arrays.judge[0, 1] == 3.1


def test_parse_error_names_file_and_line(write_jsonl):
    rows = [
        {"prompt_id": "a", "candidate_id": "1", "judge_score": 0.3, "oracle_label": 0.1},
        {"prompt_id": "a", "candidate_id": "2", "judge_score": "high", "oracle_label": 0.2},
    ]
    path = write_jsonl(rows, name="scores.jsonl")
    with pytest.raises(ParseError) as info:
        load_pointwise(path)
    assert info.value.line == 2
    assert "scores.jsonl:2" in str(info.value)


def test_duplicate_candidate_is_rejected(write_jsonl):
    rows = [
        {"prompt_id": "a", "candidate_id": "1", "judge_score": 0.3, "oracle_label": 0.1},
        {"prompt_id": "a", "candidate_id": "1", "judge_score": 0.4, "oracle_label": 0.2},
    ]
    with pytest.raises(ValidationError, match="duplicate"):
        load_pointwise(write_jsonl(rows))


def test_partial_labels_need_query_prob(write_jsonl):
    rows = [
        {"prompt_id": "a", "candidate_id": "1", "judge_score": 0.3, "oracle_label": 0.1},
        {"prompt_id": "a", "candidate_id": "2", "judge_score": 0.4, "oracle_label": 0.2},
        {"prompt_id": "b", "candidate_id": "1", "judge_score": 0.3, "labeled": False},
        {"prompt_id": "b", "candidate_id": "2", "judge_score": 0.4, "labeled": False},
    ]
    with pytest.raises(ValidationError, match="query_prob"):
        load_pointwise(write_jsonl(rows))


def test_partial_labels_with_query_prob(write_jsonl):
    rows = [
        {"prompt_id": "a", "candidate_id": "1", "judge_score": 0.3, "oracle_label": 0.1, "query_prob": 0.5},
        {"prompt_id": "a", "candidate_id": "2", "judge_score": 0.4, "oracle_label": 0.2, "query_prob": 0.5},
        {"prompt_id": "b", "candidate_id": "1", "judge_score": 0.3, "labeled": False, "query_prob": 0.5},
        {"prompt_id": "b", "candidate_id": "2", "judge_score": 0.4, "labeled": False, "query_prob": 0.5},
    ]
    ds = load_pointwise(write_jsonl(rows))

    assert ds.is_partial
    np.testing.assert_array_equal(ds.arrays.labeled, [True, False])
    assert np.isnan(ds.arrays.oracle[1]).all()


def test_mixed_labels_within_prompt(write_jsonl):
    rows = [
        {"prompt_id": "a", "candidate_id": "1", "judge_score": 0.3, "oracle_label": 0.1, "query_prob": 0.5},
        {"prompt_id": "a", "candidate_id": "2", "judge_score": 0.4, "labeled": False, "query_prob": 0.5},
    ]
    with pytest.raises(ValidationError, match="mixes labeled"):
        load_pointwise(write_jsonl(rows))


def test_csv_with_encoded_features(write_csv):
    rows = [
        {"prompt_id": "a", "candidate_id": "1", "judge_score": "0.3", "oracle_label": "0.1",
         "features": '{"length": 120}', "resample_scores": "[0.2, 0.4]"},
        {"prompt_id": "a", "candidate_id": "2", "judge_score": "0.4", "oracle_label": "0.2",
         "features": '{"length": 80}', "resample_scores": "[0.5, 0.3]"},
    ]
    ds = load_pointwise(write_csv(rows, POINTWISE_FIELDS))

    first, second = ds.group("a").candidates
    assert first.features == {"length": 120.0}
    assert second.resample_scores == (0.5, 0.3)


def test_dump_then_load_preserves_scores(tmp_path, d1):
    path = tmp_path / "d1.csv"
    dump_pointwise(d1, path)
    loaded = load_pointwise(path)

    np.testing.assert_array_equal(loaded.arrays.judge, d1.arrays.judge)
    np.testing.assert_array_equal(loaded.arrays.oracle, d1.arrays.oracle)


def _pair_row(**overrides):
    row = {
        "prompt_id": "p1",
        "candidate_a": "x",
        "candidate_b": "y",
        "judge_choice": "A",
        "oracle_choice": "A",
    }
    row.update(overrides)
    return row


def test_pairwise_choice_is_normalised(write_jsonl):
    pw = load_pairwise(write_jsonl([_pair_row(judge_choice="b", oracle_choice="tie")]))
    record = pw.records[0]
    assert record.judge_choice == "B"
    assert record.oracle_choice == "TIE"


def test_pairwise_same_candidate_is_rejected(write_jsonl):
    with pytest.raises(ValidationError):
        load_pairwise(write_jsonl([_pair_row(candidate_b="x")]))


def test_pairwise_stated_probability_range(write_jsonl):
    with pytest.raises(ValidationError, match="stated_prob_a"):
        load_pairwise(write_jsonl([_pair_row(stated_prob_a=1.3)]))


def test_pairwise_confidence_must_be_integer(write_jsonl):
    with pytest.raises(ValidationError, match="confidence"):
        load_pairwise(write_jsonl([_pair_row(confidence=2.5)]))


def test_pairwise_csv_written_and_read(tmp_path):
    pw = PairwiseDataset(
        (
            PairwiseRecord("p1", "x", "y", "A", "B", confidence=4, stated_prob_a=0.7),
            PairwiseRecord("p1", "x", "z", "TIE", "A"),
        )
    )
    path = tmp_path / "pairs.csv"
    dump_pairwise(pw, path)
    header = path.read_text(encoding="utf-8").splitlines()[0]

    assert header.split(",") == list(PAIRWISE_FIELDS)
    assert load_pairwise(path).records == pw.records


def test_empty_file_is_rejected(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("", encoding="utf-8")
    with pytest.raises(ValidationError, match="no records"):
        load_pointwise(path)
