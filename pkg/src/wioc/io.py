"""Trajectory CSV files and parameter checkpoints."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .core import EmpiricalMeasure
from .errors import InvalidInputError


def fmt_float(x: float) -> str:
    # 17 significant digits round-trips every double
    return format(float(x), ".17g")


def write_measure_csv(path, measure: EmpiricalMeasure, ids=None) -> None:
    path = Path(path)
    ids = list(range(measure.n)) if ids is None else list(ids)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + [f"v{k + 1}" for k in range(measure.dim)])
        for i, row in zip(ids, measure.points):
            w.writerow([i] + [fmt_float(v) for v in row])


def read_measure_csv(path, event_times: bool = False, horizon=None) -> EmpiricalMeasure:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidInputError(f"{path}: empty trajectory file")
    header = [h.strip() for h in rows[0]]
    K = len(header) - 1
    if header[0] != "id" or header[1:] != [f"v{k + 1}" for k in range(K)] or K < 1:
        raise InvalidInputError(f"{path}: bad header {header}")
    body = [r for r in rows[1:] if r]
    try:
        pts = np.array([[float(v) for v in r[1:]] for r in body], dtype=float)
    except ValueError as exc:
        raise InvalidInputError(f"{path}: {exc}") from None
    if pts.ndim != 2 or pts.shape[1] != K:
        raise InvalidInputError(f"{path}: ragged rows")
    return EmpiricalMeasure(pts, event_times=event_times, horizon=horizon)


def _json_value(v) -> str:
    if isinstance(v, (float, np.floating)):
        return fmt_float(v)
    if isinstance(v, np.ndarray):
        return _json_value(v.tolist())
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_json_value(x) for x in v) + "]"
    if isinstance(v, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_json_value(x)}" for k, x in v.items()) + "}"
    if isinstance(v, np.integer):
        return str(int(v))
    return json.dumps(v)


def dumps_exact(obj) -> str:
    """JSON text with every float written at 17 significant digits."""
    return _json_value(obj)


def save_checkpoint(path, family: str, dims, theta, clip_bound=None, **extra) -> None:
    record = {"family": family, "dims": list(dims), "theta": np.asarray(theta, dtype=float),
              "clip_bound": clip_bound}
    record.update(extra)
    Path(path).write_text(dumps_exact(record) + "\n")


def load_checkpoint(path) -> dict:
    record = json.loads(Path(path).read_text())
    for key in ("family", "dims", "theta", "clip_bound"):
        if key not in record:
            raise InvalidInputError(f"{path}: checkpoint missing {key!r}")
    record["theta"] = np.asarray(record["theta"], dtype=float)
    return record
