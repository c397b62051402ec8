"""Canonical data model and file loaders.

Every other module consumes either a :class:`PointwiseDataset` (one row per
prompt/candidate) or a :class:`PairwiseDataset` (one row per judged A/B
comparison). Datasets are immutable once loaded.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .constants import (
    CHOICES,
    PAIRWISE_FIELDS,
    PAIRWISE_REQUIRED,
    PERCENT_SCALE,
    POINTWISE_FIELDS,
    POINTWISE_REQUIRED,
)
from .errors import MixedScaleError, ParseError, UnlabeledError, ValidationError
from .utils import float_to_str, parse_bool, parse_float, parse_json_cell

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass(frozen=True)
class CandidateRecord:
    prompt_id: str
    candidate_id: str
    judge_score: float
    oracle_label: Optional[float] = None
    labeled: Optional[bool] = None
    query_prob: Optional[float] = None
    features: Mapping[str, float] = field(default_factory=dict)
    resample_scores: Optional[Tuple[float, ...]] = None
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None

    def __post_init__(self) -> None:
        if self.labeled is None:
            object.__setattr__(self, "labeled", self.oracle_label is not None)
        if self.resample_scores is not None and not isinstance(self.resample_scores, tuple):
            object.__setattr__(self, "resample_scores", tuple(self.resample_scores))

    def to_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {
            "prompt_id": self.prompt_id,
            "candidate_id": self.candidate_id,
            "judge_score": self.judge_score,
            "labeled": bool(self.labeled),
        }
        if self.oracle_label is not None:
            payload["oracle_label"] = self.oracle_label
        if self.query_prob is not None:
            payload["query_prob"] = self.query_prob
        if self.features:
            payload["features"] = dict(self.features)
        if self.resample_scores is not None:
            payload["resample_scores"] = list(self.resample_scores)
        if self.ci_low is not None:
            payload["ci_low"] = self.ci_low
        if self.ci_high is not None:
            payload["ci_high"] = self.ci_high
        return payload


@dataclass(frozen=True)
class PromptGroup:
    prompt_id: str
    candidates: Tuple[CandidateRecord, ...]

    @property
    def size(self) -> int:
        return len(self.candidates)

    @property
    def candidate_ids(self) -> Tuple[str, ...]:
        return tuple(c.candidate_id for c in self.candidates)

    @property
    def labeled(self) -> bool:
        return all(c.labeled for c in self.candidates)

    @property
    def query_prob(self) -> Optional[float]:
        return self.candidates[0].query_prob


@dataclass(frozen=True, eq=False)
class ScoreArrays:
    """Padded (prompts x candidates) view of a pointwise dataset.

    Padding cells are NaN in both score matrices and False in ``mask``.
    Unlabeled prompts carry NaN oracle values.
    """

    judge: np.ndarray
    oracle: np.ndarray
    mask: np.ndarray
    labeled: np.ndarray
    query_prob: np.ndarray

    @property
    def n_prompts(self) -> int:
        return int(self.judge.shape[0])

    @property
    def width(self) -> int:
        return int(self.judge.shape[1])

    @property
    def sizes(self) -> np.ndarray:
        return self.mask.sum(axis=1)

    @property
    def n_records(self) -> int:
        return int(self.mask.sum())

    @property
    def fully_labeled(self) -> bool:
        return bool(self.labeled.all())

    def require_labeled(self, operation: str) -> None:
        if not self.fully_labeled:
            missing = int((~self.labeled).sum())
            raise UnlabeledError(
                f"{operation} needs oracle labels; {missing} prompt(s) are unlabeled"
            )

    def take(self, indices: Sequence[int]) -> "ScoreArrays":
        idx = np.asarray(indices, dtype=np.intp)
        return ScoreArrays(
            judge=self.judge[idx],
            oracle=self.oracle[idx],
            mask=self.mask[idx],
            labeled=self.labeled[idx],
            query_prob=self.query_prob[idx],
        )

    def with_judge(self, judge: np.ndarray) -> "ScoreArrays":
        judge = np.where(self.mask, np.asarray(judge, dtype=float), np.nan)
        return dataclasses.replace(self, judge=judge)

    def with_labels(self, labeled: np.ndarray, query_prob: np.ndarray) -> "ScoreArrays":
        labeled = np.asarray(labeled, dtype=bool)
        oracle = np.where(labeled[:, None] & self.mask, self.oracle, np.nan)
        return ScoreArrays(
            judge=self.judge,
            oracle=oracle,
            mask=self.mask,
            labeled=labeled,
            query_prob=np.asarray(query_prob, dtype=float),
        )

    @classmethod
    def concat(cls, parts: Sequence["ScoreArrays"]) -> "ScoreArrays":
        width = max(part.width for part in parts)

        def _pad(matrix: np.ndarray, fill: Any) -> np.ndarray:
            extra = width - matrix.shape[1]
            if not extra:
                return matrix
            return np.pad(matrix, ((0, 0), (0, extra)), constant_values=fill)

        return cls(
            judge=np.concatenate([_pad(p.judge, np.nan) for p in parts]),
            oracle=np.concatenate([_pad(p.oracle, np.nan) for p in parts]),
            mask=np.concatenate([_pad(p.mask, False) for p in parts]),
            labeled=np.concatenate([p.labeled for p in parts]),
            query_prob=np.concatenate([p.query_prob for p in parts]),
        )


def _arrays_from_groups(groups: Sequence[PromptGroup]) -> ScoreArrays:
    width = max((g.size for g in groups), default=0)
    rows = len(groups)
    judge = np.full((rows, width), np.nan)
    oracle = np.full((rows, width), np.nan)
    mask = np.zeros((rows, width), dtype=bool)
    labeled = np.zeros(rows, dtype=bool)
    query_prob = np.ones(rows)
    for row, group in enumerate(groups):
        size = group.size
        judge[row, :size] = [c.judge_score for c in group.candidates]
        mask[row, :size] = True
        labeled[row] = group.labeled
        if labeled[row]:
            oracle[row, :size] = [c.oracle_label for c in group.candidates]
        if group.query_prob is not None:
            query_prob[row] = group.query_prob
    return ScoreArrays(judge=judge, oracle=oracle, mask=mask, labeled=labeled, query_prob=query_prob)


@dataclass(frozen=True)
class PointwiseDataset:
    groups: Tuple[PromptGroup, ...]
    n_per_prompt: Optional[int] = None
    unbounded: bool = False
    _arrays: Optional[ScoreArrays] = field(default=None, repr=False, compare=False)

    @property
    def arrays(self) -> ScoreArrays:
        if self._arrays is None:
            object.__setattr__(self, "_arrays", _arrays_from_groups(self.groups))
        return self._arrays  # type: ignore[return-value]

    @property
    def n_prompts(self) -> int:
        return len(self.groups)

    @property
    def n_records(self) -> int:
        return sum(g.size for g in self.groups)

    @property
    def prompt_ids(self) -> Tuple[str, ...]:
        return tuple(g.prompt_id for g in self.groups)

    @property
    def is_partial(self) -> bool:
        return any(not g.labeled for g in self.groups)

    def records(self) -> Iterator[CandidateRecord]:
        for group in self.groups:
            yield from group.candidates

    def group(self, prompt_id: str) -> PromptGroup:
        for group in self.groups:
            if group.prompt_id == prompt_id:
                return group
        raise KeyError(prompt_id)

    def take(self, indices: Sequence[int]) -> "PointwiseDataset":
        """Prompt-level resample; repeated prompt ids are allowed here."""
        idx = list(indices)
        return PointwiseDataset(
            groups=tuple(self.groups[i] for i in idx),
            n_per_prompt=self.n_per_prompt,
            unbounded=self.unbounded,
            _arrays=self.arrays.take(idx),
        )

    def with_judge_scores(self, judge: np.ndarray) -> "PointwiseDataset":
        """Replace every judge score with the matching cell of a padded matrix."""
        judge = np.asarray(judge, dtype=float)
        groups = tuple(
            PromptGroup(
                prompt_id=group.prompt_id,
                candidates=tuple(
                    dataclasses.replace(record, judge_score=float(judge[row, col]))
                    for col, record in enumerate(group.candidates)
                ),
            )
            for row, group in enumerate(self.groups)
        )
        return PointwiseDataset(
            groups=groups,
            n_per_prompt=self.n_per_prompt,
            unbounded=self.unbounded,
            _arrays=self.arrays.with_judge(judge),
        )

    def with_label_mask(self, labeled: np.ndarray, query_prob: np.ndarray) -> "PointwiseDataset":
        """Hide oracle labels of prompts where ``labeled`` is False."""
        groups = []
        for row, group in enumerate(self.groups):
            keep = bool(labeled[row])
            prob = float(query_prob[row])
            groups.append(
                PromptGroup(
                    prompt_id=group.prompt_id,
                    candidates=tuple(
                        dataclasses.replace(
                            record,
                            labeled=keep,
                            oracle_label=record.oracle_label if keep else None,
                            query_prob=prob,
                        )
                        for record in group.candidates
                    ),
                )
            )
        return PointwiseDataset(
            groups=tuple(groups),
            n_per_prompt=self.n_per_prompt,
            unbounded=self.unbounded,
            _arrays=self.arrays.with_labels(labeled, query_prob),
        )

    @classmethod
    def from_arrays(
        cls,
        judge: np.ndarray,
        oracle: np.ndarray,
        prompt_prefix: str = "p",
        unbounded: bool = True,
    ) -> "PointwiseDataset":
        """Build a fully labeled dataset from dense (prompts x candidates) matrices."""
        judge = np.asarray(judge, dtype=float)
        oracle = np.asarray(oracle, dtype=float)
        rows, width = judge.shape
        digits = max(len(str(rows)), 4)
        groups = []
        for row in range(rows):
            prompt_id = f"{prompt_prefix}{row:0{digits}d}"
            groups.append(
                PromptGroup(
                    prompt_id=prompt_id,
                    candidates=tuple(
                        CandidateRecord(
                            prompt_id=prompt_id,
                            candidate_id=f"c{col + 1}",
                            judge_score=float(judge[row, col]),
                            oracle_label=float(oracle[row, col]),
                        )
                        for col in range(width)
                    ),
                )
            )
        arrays = ScoreArrays(
            judge=judge.copy(),
            oracle=oracle.copy(),
            mask=np.ones((rows, width), dtype=bool),
            labeled=np.ones(rows, dtype=bool),
            query_prob=np.ones(rows),
        )
        return cls(groups=tuple(groups), n_per_prompt=width, unbounded=unbounded, _arrays=arrays)


@dataclass(frozen=True)
class PairwiseRecord:
    prompt_id: str
    candidate_a: str
    candidate_b: str
    judge_choice: str
    oracle_choice: str
    confidence: Optional[int] = None
    stated_prob_a: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {
            "prompt_id": self.prompt_id,
            "candidate_a": self.candidate_a,
            "candidate_b": self.candidate_b,
            "judge_choice": self.judge_choice,
            "oracle_choice": self.oracle_choice,
        }
        if self.confidence is not None:
            payload["confidence"] = self.confidence
        if self.stated_prob_a is not None:
            payload["stated_prob_a"] = self.stated_prob_a
        return payload


@dataclass(frozen=True)
class PairwiseDataset:
    records: Tuple[PairwiseRecord, ...]

    def __len__(self) -> int:
        return len(self.records)

    def by_prompt(self) -> Dict[str, List[PairwiseRecord]]:
        grouped: Dict[str, List[PairwiseRecord]] = {}
        for record in self.records:
            grouped.setdefault(record.prompt_id, []).append(record)
        return grouped


# --------------------------------------------------------------------------
# Reading


def _resolve_format(path: Path, fmt: Optional[str]) -> str:
    if fmt:
        cleaned = fmt.strip().lower()
    else:
        cleaned = path.suffix.lower().lstrip(".")
        if cleaned == "json":
            cleaned = "jsonl"
    if cleaned not in {"jsonl", "csv"}:
        raise ParseError(f"unsupported format '{cleaned}' (expected jsonl or csv)", path)
    return cleaned


def _read_jsonl_rows(path: Path) -> List[Tuple[int, Dict[str, Any]]]:
    rows: List[Tuple[int, Dict[str, Any]]] = []
    with path.open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            try:
                payload = json.loads(stripped)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON: {exc.msg}", path, line_no) from exc
            if not isinstance(payload, dict):
                raise ParseError("each line must be a JSON object", path, line_no)
            rows.append((line_no, payload))
    return rows


def _read_csv_rows(path: Path, required: Sequence[str]) -> List[Tuple[int, Dict[str, Any]]]:
    with path.open("r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            return []
        reader.fieldnames = [h.strip() for h in reader.fieldnames]
        missing = [column for column in required if column not in reader.fieldnames]
        if missing:
            raise ValidationError(f"missing required columns: {', '.join(missing)}", path, 1)
        rows: List[Tuple[int, Dict[str, Any]]] = []
        for entry in reader:
            if None in entry:
                raise ParseError("row has more cells than the header", path, reader.line_num)
            normalised = {
                (key or "").strip(): (value or "").strip() for key, value in entry.items()
            }
            if not any(normalised.values()):
                continue
            rows.append((reader.line_num, normalised))
        return rows


def _read_rows(path: Path, fmt: str, required: Sequence[str]) -> List[Tuple[int, Dict[str, Any]]]:
    if fmt == "jsonl":
        return _read_jsonl_rows(path)
    return _read_csv_rows(path, required)


def _text(raw: Dict[str, Any], key: str, path: Path, line: int) -> str:
    value = raw.get(key)
    if value is None or str(value).strip() == "":
        raise ValidationError(f"missing required field '{key}'", path, line)
    return str(value).strip()


def _coerce(value: Any, label: str, path: Path, line: int) -> Optional[float]:
    try:
        return parse_float(value)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{label}: {exc}", path, line) from exc


def _number(raw: Dict[str, Any], key: str, path: Path, line: int) -> Optional[float]:
    return _coerce(raw.get(key), f"field '{key}'", path, line)


def _parse_candidate(raw: Dict[str, Any], path: Path, line: int) -> CandidateRecord:
    prompt_id = _text(raw, "prompt_id", path, line)
    candidate_id = _text(raw, "candidate_id", path, line)
    judge_score = _number(raw, "judge_score", path, line)
    if judge_score is None:
        raise ValidationError("missing required field 'judge_score'", path, line)
    oracle_label = _number(raw, "oracle_label", path, line)
    try:
        labeled = parse_bool(raw.get("labeled"))
        features_raw = parse_json_cell(raw.get("features"))
        resample_raw = parse_json_cell(raw.get("resample_scores"))
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc), path, line) from exc

    features: Dict[str, float] = {}
    if features_raw is not None:
        if not isinstance(features_raw, dict):
            raise ParseError("features must be a map of name to number", path, line)
        for name, value in features_raw.items():
            number = _coerce(value, f"feature '{name}'", path, line)
            if number is not None:
                features[str(name)] = number

    resample_scores: Optional[Tuple[float, ...]] = None
    if resample_raw is not None:
        if not isinstance(resample_raw, list):
            raise ParseError("resample_scores must be a list of numbers", path, line)
        parsed = [_coerce(value, "resample_scores", path, line) for value in resample_raw]
        if any(value is None for value in parsed):
            raise ParseError("resample_scores contains an empty entry", path, line)
        resample_scores = tuple(float(value) for value in parsed)  # type: ignore[arg-type]

    if labeled is None:
        labeled = oracle_label is not None
    if labeled and oracle_label is None:
        raise ValidationError(f"record {prompt_id}/{candidate_id} is labeled but has no oracle_label", path, line)
    if not labeled and oracle_label is not None:
        raise ValidationError(f"record {prompt_id}/{candidate_id} is unlabeled but carries an oracle_label", path, line)

    return CandidateRecord(
        prompt_id=prompt_id,
        candidate_id=candidate_id,
        judge_score=judge_score,
        oracle_label=oracle_label,
        labeled=labeled,
        query_prob=_number(raw, "query_prob", path, line),
        features=features,
        resample_scores=resample_scores,
        ci_low=_number(raw, "ci_low", path, line),
        ci_high=_number(raw, "ci_high", path, line),
    )


def _detect_percent_scale(located: Sequence[Tuple[int, CandidateRecord]], path: Path) -> bool:
    """True when the file's judge scores are on the 0-100 scale.

    Zero reads the same on both scales and carries no evidence.
    """
    unit_line: Optional[int] = None
    percent_line: Optional[int] = None
    for line, record in located:
        score = record.judge_score
        if score > 1.0 and percent_line is None:
            percent_line = line
        elif 0.0 < score <= 1.0 and unit_line is None:
            unit_line = line
    if percent_line is not None and unit_line is not None:
        raise MixedScaleError(
            f"judge scores mix the unit scale (line {unit_line}) and the 0-100 scale (line {percent_line})",
            path,
            percent_line,
        )
    return percent_line is not None


def _rescale(record: CandidateRecord) -> CandidateRecord:
    def _div(value: Optional[float]) -> Optional[float]:
        return None if value is None else value / PERCENT_SCALE

    return dataclasses.replace(
        record,
        judge_score=record.judge_score / PERCENT_SCALE,
        ci_low=_div(record.ci_low),
        ci_high=_div(record.ci_high),
        resample_scores=(
            None
            if record.resample_scores is None
            else tuple(v / PERCENT_SCALE for v in record.resample_scores)
        ),
    )


def _check_ranges(record: CandidateRecord, path: Path, line: int, unbounded: bool) -> None:
    name = f"{record.prompt_id}/{record.candidate_id}"

    def _unit(label: str, value: Optional[float]) -> None:
        if value is not None and not 0.0 <= value <= 1.0:
            raise ValidationError(f"record {name}: {label} {value} outside [0, 1]", path, line)

    if not unbounded:
        _unit("judge_score", record.judge_score)
        _unit("oracle_label", record.oracle_label)
        _unit("ci_low", record.ci_low)
        _unit("ci_high", record.ci_high)
        for value in record.resample_scores or ():
            _unit("resample score", value)
    if record.ci_low is not None and record.ci_high is not None and record.ci_low > record.ci_high:
        raise ValidationError(f"record {name}: ci_low exceeds ci_high", path, line)
    if record.query_prob is not None and not 0.0 < record.query_prob <= 1.0:
        raise ValidationError(f"record {name}: query_prob {record.query_prob} outside (0, 1]", path, line)


def _group_records(
    located: Sequence[Tuple[int, CandidateRecord]], path: Path
) -> Tuple[PromptGroup, ...]:
    buckets: Dict[str, List[Tuple[int, CandidateRecord]]] = {}
    for line, record in located:
        buckets.setdefault(record.prompt_id, []).append((line, record))

    partial = any(not record.labeled for _, record in located)
    groups: List[PromptGroup] = []
    for prompt_id, members in buckets.items():
        first_line = members[0][0]
        if len(members) < 2:
            raise ValidationError(f"prompt '{prompt_id}' has a single candidate (need at least 2)", path, first_line)
        seen: Dict[str, int] = {}
        for line, record in members:
            if record.candidate_id in seen:
                raise ValidationError(
                    f"prompt '{prompt_id}': duplicate candidate_id '{record.candidate_id}' (first on line {seen[record.candidate_id]})",
                    path,
                    line,
                )
            seen[record.candidate_id] = line
            if partial and record.query_prob is None:
                raise ValidationError(
                    f"record {prompt_id}/{record.candidate_id}: query_prob is required when any record is unlabeled",
                    path,
                    line,
                )
        if len({record.labeled for _, record in members}) > 1:
            raise ValidationError(f"prompt '{prompt_id}' mixes labeled and unlabeled candidates", path, first_line)
        if len({record.query_prob for _, record in members}) > 1:
            raise ValidationError(f"prompt '{prompt_id}' has inconsistent query_prob values", path, first_line)
        groups.append(PromptGroup(prompt_id=prompt_id, candidates=tuple(r for _, r in members)))
    return tuple(groups)


def _uniform_size(groups: Sequence[PromptGroup]) -> Optional[int]:
    sizes = {g.size for g in groups}
    return sizes.pop() if len(sizes) == 1 else None


def load_pointwise(
    path: PathLike, format: Optional[str] = None, unbounded: bool = False
) -> PointwiseDataset:
    """Load candidate records and group them by prompt in file order.

    Judge scores above 1 mark a 0-100 file; the whole file is then divided by
    100. ``unbounded`` accepts simulated data (no range or scale checks).
    """
    path = Path(path)
    fmt = _resolve_format(path, format)
    rows = _read_rows(path, fmt, POINTWISE_REQUIRED)
    if not rows:
        raise ValidationError("file contains no records", path)

    located = [(line, _parse_candidate(raw, path, line)) for line, raw in rows]
    if not unbounded and _detect_percent_scale(located, path):
        logger.info("%s: judge scores on the 0-100 scale; dividing by 100", path.name)
        located = [(line, _rescale(record)) for line, record in located]
    for line, record in located:
        _check_ranges(record, path, line, unbounded)

    groups = _group_records(located, path)
    dataset = PointwiseDataset(groups=groups, n_per_prompt=_uniform_size(groups), unbounded=unbounded)
    logger.debug("%s: %d prompts, %d records", path.name, dataset.n_prompts, dataset.n_records)
    return dataset


def _parse_choice(raw: Dict[str, Any], key: str, path: Path, line: int) -> str:
    value = _text(raw, key, path, line).upper()
    if value not in CHOICES:
        raise ValidationError(f"{key} '{value}' is not one of A, B, TIE", path, line)
    return value


def _parse_pair(raw: Dict[str, Any], path: Path, line: int) -> PairwiseRecord:
    prompt_id = _text(raw, "prompt_id", path, line)
    candidate_a = _text(raw, "candidate_a", path, line)
    candidate_b = _text(raw, "candidate_b", path, line)
    if candidate_a == candidate_b:
        raise ValidationError(f"prompt '{prompt_id}': candidate_a equals candidate_b ('{candidate_a}')", path, line)
    confidence_value = _number(raw, "confidence", path, line)
    confidence: Optional[int] = None
    if confidence_value is not None:
        if not confidence_value.is_integer() or not 1 <= confidence_value <= 5:
            raise ValidationError(f"confidence {confidence_value} is not an integer in 1-5", path, line)
        confidence = int(confidence_value)
    stated = _number(raw, "stated_prob_a", path, line)
    if stated is not None and not 0.0 <= stated <= 1.0:
        raise ValidationError(f"stated_prob_a {stated} outside [0, 1]", path, line)
    return PairwiseRecord(
        prompt_id=prompt_id,
        candidate_a=candidate_a,
        candidate_b=candidate_b,
        judge_choice=_parse_choice(raw, "judge_choice", path, line),
        oracle_choice=_parse_choice(raw, "oracle_choice", path, line),
        confidence=confidence,
        stated_prob_a=stated,
    )


def load_pairwise(path: PathLike, format: Optional[str] = None) -> PairwiseDataset:
    path = Path(path)
    fmt = _resolve_format(path, format)
    rows = _read_rows(path, fmt, PAIRWISE_REQUIRED)
    if not rows:
        raise ValidationError("file contains no records", path)
    return PairwiseDataset(records=tuple(_parse_pair(raw, path, line) for line, raw in rows))


# --------------------------------------------------------------------------
# Writing


def _csv_cell(key: str, value: Any) -> str:
    if value is None:
        return ""
    if key in {"features", "resample_scores"}:
        return json.dumps(value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return float_to_str(value)
    return str(value)


def _write_rows(rows: Sequence[Dict[str, Any]], path: Path, fmt: str, headers: Sequence[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "jsonl":
        with path.open("w", encoding="utf-8") as handle:
            for row in rows:
                handle.write(json.dumps(row) + "\n")
        return
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(headers), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: _csv_cell(key, row.get(key)) for key in headers})


def dump_pointwise(ds: PointwiseDataset, path: PathLike, format: Optional[str] = None) -> None:
    path = Path(path)
    _write_rows([r.to_dict() for r in ds.records()], path, _resolve_format(path, format), POINTWISE_FIELDS)


def dump_pairwise(pw: PairwiseDataset, path: PathLike, format: Optional[str] = None) -> None:
    path = Path(path)
    _write_rows([r.to_dict() for r in pw.records], path, _resolve_format(path, format), PAIRWISE_FIELDS)
