from __future__ import annotations

import itertools

import numpy as np
import pytest

from judge_audit.calibration import (
    EFFECT_METRICS,
    MonotoneCalibrator,
    calibration_effect,
    isotonic_fit,
    split_calibration_effect,
)
from judge_audit.dataset import PointwiseDataset
from judge_audit.errors import InsufficientDataError, LengthMismatchError

from conftest import random_dataset


def test_isotonic_keeps_monotone_labels():
    fit = isotonic_fit([1.0, 2.0, 3.0], [0.1, 0.2, 0.3])
    np.testing.assert_allclose(fit.values, [0.1, 0.2, 0.3])


def test_isotonic_pools_violators():
    fit = isotonic_fit([1.0, 2.0, 3.0], [3.0, 1.0, 2.0])
    np.testing.assert_allclose(fit.values, [2.0, 2.0, 2.0])


def test_isotonic_constant_labels():
    fit = isotonic_fit([0.3, 0.1, 0.2], [0.5, 0.5, 0.5])
    np.testing.assert_allclose(fit.values, [0.5, 0.5, 0.5])


def test_isotonic_pools_tied_scores_first():
    fit = isotonic_fit([0.5, 0.5, 0.9], [0.0, 1.0, 0.8])
    np.testing.assert_array_equal(fit.breakpoints, [0.5, 0.9])
    np.testing.assert_allclose(fit.values, [0.5, 0.8])


def _best_block_fit(y):
    """Exhaustive least squares over monotone consecutive-block fits."""
    n = len(y)
    best, best_sse = None, np.inf
    for cuts in itertools.product([False, True], repeat=n - 1):
        bounds = [0] + [i + 1 for i, cut in enumerate(cuts) if cut] + [n]
        means = [float(np.mean(y[a:b])) for a, b in zip(bounds, bounds[1:])]
        if any(later < earlier for earlier, later in zip(means, means[1:])):
            continue
        fitted = np.concatenate([np.full(b - a, m) for (a, b), m in zip(zip(bounds, bounds[1:]), means)])
        sse = float(np.sum((y - fitted) ** 2))
        if sse < best_sse:
            best, best_sse = fitted, sse
    return best


def test_isotonic_matches_exhaustive_search():
    rng = np.random.default_rng(404)
    for _ in range(200):
        n = int(rng.integers(2, 7))
        x = rng.permutation(n).astype(float)
        y = rng.random(n)
        fit = isotonic_fit(x, y)
        expected = _best_block_fit(y[np.argsort(x)])
        np.testing.assert_allclose(fit.values, expected, atol=1e-6)


def test_isotonic_refit_on_fitted_values_is_stable():
    rng = np.random.default_rng(405)
    for _ in range(200):
        n = int(rng.integers(2, 40))
        scores = np.round(rng.random(n) * 10) / 10
        fit = isotonic_fit(scores, rng.random(n))
        refit = isotonic_fit(scores, fit(scores))
        np.testing.assert_array_equal(refit.breakpoints, fit.breakpoints)
        np.testing.assert_allclose(refit.values, fit.values, rtol=0, atol=1e-12)


def test_calibrator_is_a_right_continuous_step():
    calibrator = MonotoneCalibrator(np.array([0.2, 0.5]), np.array([0.1, 0.7]))
    np.testing.assert_array_equal(calibrator([0.0, 0.2, 0.49, 0.5, 3.0]), [0.1, 0.1, 0.1, 0.7, 0.7])


def test_calibrator_from_dict_validation():
    with pytest.raises(LengthMismatchError):
        MonotoneCalibrator.from_dict({"breakpoints": [0.1, 0.2], "values": [0.3]})
    restored = MonotoneCalibrator.from_dict({"breakpoints": [0.1, 0.2], "values": [0.3, 0.4]})
    assert restored.to_dict() == {"breakpoints": [0.1, 0.2], "values": [0.3, 0.4]}


def test_isotonic_needs_matching_lengths():
    with pytest.raises(LengthMismatchError):
        isotonic_fit([0.1, 0.2], [0.3])


def test_strictly_increasing_calibrator_keeps_decision_metrics(d1):
    calibrator = MonotoneCalibrator(np.array([0.2, 0.4, 0.6, 0.8]), np.array([0.1, 0.2, 0.3, 0.9]))
    effect = calibration_effect(d1, calibrator)
    assert effect.delta["recovery"] == 0.0
    assert effect.delta["pcs"] == 0.0
    assert effect.delta["p_nt"] == 0.0
    assert effect.delta["global_r"] != 0.0


def test_merging_calibrator_creates_ties(d1):
    calibrator = MonotoneCalibrator(np.array([0.2, 0.4, 0.6, 0.8]), np.array([0.0, 0.5, 0.5, 1.0]))
    effect = calibration_effect(d1, calibrator)
    assert effect.before["recovery"] == 0.0
    assert effect.after["recovery"] == 0.5
    assert effect.after["judge_tie_rate"] == 0.5
    assert effect.notes


def test_identity_calibration_changes_nothing(d1):
    effect = calibration_effect(d1, lambda scores: scores)
    assert set(effect.delta) == set(EFFECT_METRICS)
    assert all(delta == 0.0 for delta in effect.delta.values())


def test_split_calibration_is_reproducible():
    ds = random_dataset(np.random.default_rng(15), n_prompts=40, levels=5)
    first = split_calibration_effect(ds, seed=3)
    second = split_calibration_effect(ds, seed=3)
    assert first.to_dict() == second.to_dict()
    assert (first.n_fit_prompts, first.n_eval_prompts) == (20, 20)


def test_split_calibration_needs_both_sides():
    ds = PointwiseDataset.from_arrays(np.array([[0.1, 0.9]]), np.array([[0.2, 0.8]]))
    with pytest.raises(InsufficientDataError):
        split_calibration_effect(ds)
