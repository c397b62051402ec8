from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any, Callable, Dict, List, Sequence

import numpy as np
import pytest

from judge_audit.dataset import PointwiseDataset

D1_JUDGE = [[0.8, 0.2], [0.6, 0.4]]
D1_ORACLE = [[1.0, 0.0], [0.0, 1.0]]
D2_JUDGE = [[0.5, 0.5, 0.5, 0.5]]
D2_ORACLE = [[0.90, 0.70, 0.69, 0.68]]


def records_from_matrices(judge: Sequence[Sequence[float]], oracle: Sequence[Sequence[float]], prefix: str = "p") -> List[Dict[str, Any]]:
    rows = []
    for p, (scores, labels) in enumerate(zip(judge, oracle), start=1):
        for c, (score, label) in enumerate(zip(scores, labels), start=1):
            rows.append(
                {
                    "prompt_id": f"{prefix}{p}",
                    "candidate_id": f"c{c}",
                    "judge_score": score,
                    "oracle_label": label,
                }
            )
    return rows


@pytest.fixture
def d1() -> PointwiseDataset:
    return PointwiseDataset.from_arrays(np.array(D1_JUDGE), np.array(D1_ORACLE), unbounded=False)


@pytest.fixture
def d2() -> PointwiseDataset:
    return PointwiseDataset.from_arrays(np.array(D2_JUDGE), np.array(D2_ORACLE), unbounded=False)


@pytest.fixture
def d1_records() -> List[Dict[str, Any]]:
    return records_from_matrices(D1_JUDGE, D1_ORACLE)


@pytest.fixture
def write_jsonl(tmp_path: Path) -> Callable[..., Path]:
    def _write(rows: Sequence[Dict[str, Any]], name: str = "data.jsonl") -> Path:
        path = tmp_path / name
        with path.open("w", encoding="utf-8") as handle:
            for row in rows:
                handle.write(json.dumps(row) + "\n")
        return path

    return _write


@pytest.fixture
def write_csv(tmp_path: Path) -> Callable[..., Path]:
    def _write(rows: Sequence[Dict[str, Any]], headers: Sequence[str], name: str = "data.csv") -> Path:
        path = tmp_path / name
        with path.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=list(headers))
            writer.writeheader()
            for row in rows:
                writer.writerow({key: row.get(key, "") for key in headers})
        return path

    return _write


def random_dataset(rng: np.random.Generator, n_prompts: int = 30, n_candidates: int = 4, levels: int = 0) -> PointwiseDataset:
    """Uniform scores; ``levels`` > 0 rounds judge scores onto a grid so ties occur."""
    judge = rng.random((n_prompts, n_candidates))
    oracle = rng.random((n_prompts, n_candidates))
    if levels:
        judge = np.round(judge * levels) / levels
    return PointwiseDataset.from_arrays(judge, oracle)
