"""File formats and atomic writing.

Artifacts are flat text: trajectory CSV (``step,value`` with ``#`` metadata
comments), long-form plot CSV (``series,x,y``), and JSON documents with
sorted keys.  Every write goes through a temp-file-plus-rename so a crashed
or interrupted run never leaves a partial artifact, and no artifact embeds
timestamps, so reruns with identical inputs are byte-identical.
"""
from __future__ import annotations

import json
import os
import tempfile
from typing import Any, Iterable, Mapping

import numpy as np

TRAJECTORY_HEADER = "step,value"
PLOT_HEADER = "series,x,y"


def atomic_write_text(path: str, text: str) -> None:
    """Write ``text`` to ``path`` atomically (temp file + rename)."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_number(x: Any) -> str:
    """Shortest round-trip decimal form; integral floats print as integers."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    v = float(x)
    if np.isfinite(v) and v == int(v) and abs(v) < 2**53:
        return str(int(v))
    return repr(v)


def trajectory_text(values: np.ndarray, metadata: Mapping[str, Any] | None = None) -> str:
    """Serialize a trajectory to CSV text with ``#`` metadata comments."""
    lines = []
    for key in metadata or {}:
        val = metadata[key]
        if not isinstance(val, str):
            val = json.dumps(val, sort_keys=True)
        lines.append(f"# {key}: {val}")
    lines.append(TRAJECTORY_HEADER)
    for step, value in enumerate(np.asarray(values)):
        lines.append(f"{step},{format_number(value)}")
    return "\n".join(lines) + "\n"


def write_trajectory_csv(
    path: str, values: np.ndarray, metadata: Mapping[str, Any] | None = None
) -> None:
    atomic_write_text(path, trajectory_text(values, metadata))


def read_trajectory_csv(path: str) -> tuple[np.ndarray, dict[str, Any]]:
    """Parse a trajectory CSV back into ``(values, metadata)``.

    Metadata values are decoded as JSON when possible and kept as strings
    otherwise.  Rows must carry consecutive step indices starting at zero.
    """
    metadata: dict[str, Any] = {}
    values: list[float] = []
    saw_header = False
    with open(path, "r", encoding="utf-8") as handle:
        for raw in handle:
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if ":" in body:
                    key, _, val = body.partition(":")
                    val = val.strip()
                    try:
                        metadata[key.strip()] = json.loads(val)
                    except (json.JSONDecodeError, ValueError):
                        metadata[key.strip()] = val
                continue
            if not saw_header:
                if line != TRAJECTORY_HEADER:
                    raise ValueError(
                        f"{path}: expected header {TRAJECTORY_HEADER!r}, got {line!r}"
                    )
                saw_header = True
                continue
            step_s, _, value_s = line.partition(",")
            if int(step_s) != len(values):
                raise ValueError(f"{path}: non-consecutive step index {step_s}")
            values.append(float(value_s))
    if not saw_header:
        raise ValueError(f"{path}: missing {TRAJECTORY_HEADER!r} header")
    return np.asarray(values, dtype=np.float64), metadata


def json_text(obj: Any) -> str:
    """Canonical JSON serialization (sorted keys, stable float repr)."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path: str, obj: Any) -> None:
    atomic_write_text(path, json_text(obj))


def read_json(path: str) -> Any:
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


def plot_csv_text(rows: Iterable[tuple[str, Any, Any]]) -> str:
    """Serialize ``(series, x, y)`` rows to the long-form plot CSV."""
    lines = [PLOT_HEADER]
    for series, x, y in rows:
        lines.append(f"{series},{format_number(x)},{format_number(y)}")
    return "\n".join(lines) + "\n"


def write_plot_csv(path: str, rows: Iterable[tuple[str, Any, Any]]) -> None:
    atomic_write_text(path, plot_csv_text(rows))


def jsonable(obj: Any) -> Any:
    """Recursively convert numpy scalars/arrays for JSON serialization."""
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    return obj
