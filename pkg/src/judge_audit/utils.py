from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Any, List, Optional, Tuple

import numpy as np

_TRUE_STRINGS = {"true", "1", "yes", "y", "t"}
_FALSE_STRINGS = {"false", "0", "no", "n", "f"}


def parse_float(value: Any) -> Optional[float]:
    """Parse a numeric cell; blank cells and nulls become None.

    Raises ValueError for anything that is present but not a finite number.
    """
    if value is None:
        return None
    if isinstance(value, bool):
        raise ValueError(f"expected a number, got boolean {value!r}")
    if isinstance(value, (int, float)):
        number = float(value)
    else:
        cleaned = str(value).strip()
        if not cleaned or cleaned.lower() in {"null", "none", "nan"}:
            return None
        number = float(cleaned)
    if not math.isfinite(number):
        raise ValueError(f"expected a finite number, got {value!r}")
    return number


def parse_bool(value: Any) -> Optional[bool]:
    if value is None:
        return None
    if isinstance(value, bool):
        return value
    if isinstance(value, (int, float)) and value in (0, 1):
        return bool(value)
    cleaned = str(value).strip().lower()
    if not cleaned:
        return None
    if cleaned in _TRUE_STRINGS:
        return True
    if cleaned in _FALSE_STRINGS:
        return False
    raise ValueError(f"expected a boolean, got {value!r}")


def parse_json_cell(value: Any) -> Any:
    """CSV cells carry list/map fields JSON-encoded; JSONL already decoded them."""
    if value is None or isinstance(value, (list, dict)):
        return value
    cleaned = str(value).strip()
    if not cleaned:
        return None
    return json.loads(cleaned)


def float_to_str(value: Optional[float]) -> str:
    if value is None:
        return ""
    if isinstance(value, float) and math.isnan(value):
        return ""
    return repr(float(value))


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def argmax_tie_mask(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Candidates attaining their row maximum; exact equality, padding excluded."""
    filled = np.where(mask, values, -np.inf)
    row_max = filled.max(axis=1, keepdims=True)
    return mask & (filled == row_max)


def top_two_margin(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Max minus second max per row (0 when the maximum is shared)."""
    filled = np.where(mask, values, -np.inf)
    ordered = np.sort(filled, axis=1)
    return ordered[:, -1] - ordered[:, -2]


def pair_index(width: int) -> Tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(width, k=1)


def pair_differences(
    values: np.ndarray, mask: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Within-row differences values[i] - values[j] for every i < j.

    Returns (differences, valid) with shape (rows, width * (width - 1) / 2).
    """
    left, right = pair_index(values.shape[1])
    valid = mask[:, left] & mask[:, right]
    with np.errstate(invalid="ignore"):
        diff = values[:, left] - values[:, right]
    return np.where(valid, diff, 0.0), valid


def ceil_count(fraction: float, total: int) -> int:
    return int(math.ceil(fraction * total - 1e-12))


def floor_count(fraction: float, total: int) -> int:
    return int(math.floor(fraction * total + 1e-12))


def as_float_list(values: Any) -> List[float]:
    return [float(v) for v in values]
