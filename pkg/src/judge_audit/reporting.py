"""Result writers shared by the CLI commands."""
from __future__ import annotations

import csv
import dataclasses
import json
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .utils import file_sha256, float_to_str


def to_jsonable(value: Any) -> Any:
    """Normalise results into JSON-ready primitives; NaN becomes null."""
    if value is None or isinstance(value, (bool, str)):
        return value
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        number = float(value)
        return None if math.isnan(number) or math.isinf(number) else number
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if hasattr(value, "to_dict"):
        return to_jsonable(value.to_dict())
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return to_jsonable(dataclasses.asdict(value))
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"cannot serialise {type(value).__name__} into a report")


def _csv_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return float_to_str(float(value))
    if isinstance(value, (list, tuple, dict)):
        return json.dumps(to_jsonable(value))
    return str(value)


def run_metadata(
    command: str, config: Dict[str, Any], inputs: Sequence[Path] = ()
) -> Dict[str, Any]:
    """Version, resolved config and input hashes embedded in every result."""
    return {
        "tool": "judge-audit",
        "version": __version__,
        "command": command,
        "config": to_jsonable(config),
        "inputs": [{"path": str(p), "sha256": file_sha256(p)} for p in inputs],
    }


def write_json(payload: Any, path: Path) -> None:
    text = json.dumps(to_jsonable(payload), indent=2, ensure_ascii=False)
    path.write_text(text + "\n", encoding="utf-8")


def write_markdown(text: str, path: Path, title: Optional[str] = None) -> None:
    body = f"# {title}\n\n{text}" if title else text
    path.write_text(body, encoding="utf-8")


def write_csv(rows: List[Dict[str, Any]], path: Path, headers: Sequence[str]) -> int:
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(headers), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: _csv_value(row.get(key)) for key in headers})
    return len(rows)


def markdown_table(rows: List[Dict[str, Any]], headers: Sequence[str]) -> str:
    def cell(value: Any) -> str:
        if value is None:
            return "---"
        if isinstance(value, (float, np.floating)):
            return f"{float(value):.4f}"
        return str(value)

    lines = ["| " + " | ".join(headers) + " |", "|" + "---|" * len(headers)]
    for row in rows:
        lines.append("| " + " | ".join(cell(row.get(h)) for h in headers) + " |")
    return "\n".join(lines) + "\n"


def config_markdown(metadata: Dict[str, Any]) -> str:
    lines = [
        "",
        "## Run",
        "",
        f"- version: {metadata['version']}",
        f"- command: {metadata['command']}",
    ]
    for entry in metadata["inputs"]:
        lines.append(f"- input: {entry['path']} (sha256 {entry['sha256']})")
    lines += ["", "```json", json.dumps(metadata["config"], indent=2), "```", ""]
    return "\n".join(lines)
