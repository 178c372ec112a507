"""Run records: JSON serialisation, schema and CSV curve export."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

RATIO_COLUMNS = ("candidate_id", "n_or_lambda", "ratio", "bound", "pass")


@dataclass
class RunRecord:
    """Outcome of one CLI run.

    ``outputs`` holds scalar results, ``tables`` row-oriented ratio tables
    (columns :data:`RATIO_COLUMNS`), ``curves`` named columns of equal length
    for plotting.  ``witness`` describes the first failing check, if any.
    """

    command: str
    preset: str
    config_hash: str
    seed: int
    passed: bool
    outputs: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)
    witness: dict | None = None
    started: str = ""
    finished: str = ""
    version: str = "1"


def timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def config_hash(config) -> str:
    """SHA-256 of the canonical JSON encoding of a configuration."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=_plain)
    return hashlib.sha256(blob.encode()).hexdigest()


def _plain(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if dataclasses.is_dataclass(obj):
        return dataclasses.asdict(obj)
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def to_json(record: RunRecord) -> str:
    # floats use repr, so values round-trip exactly; inf/nan become Infinity/NaN
    return json.dumps(dataclasses.asdict(record), sort_keys=True, indent=2, default=_plain,
                      allow_nan=True) + "\n"


def write_report(record: RunRecord, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_json(record))
    return path


def read_report(path) -> RunRecord:
    data = json.loads(Path(path).read_text())
    return RunRecord(**data)


def load_schema() -> dict:
    return json.loads(resources.files("obslab").joinpath("run_record.schema.json").read_text())


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_table(rows, columns, path) -> Path:
    """CSV with a header row; cells formatted deterministically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row[c]) for c in columns])
    return path


def emit_plot_data(record: RunRecord, directory) -> list:
    """Write one CSV per curve and per ratio table; returns the paths in a stable order."""
    directory = Path(directory)
    stem = f"{record.command}-{record.preset}"
    paths = []
    for name in sorted(record.curves):
        cols = record.curves[name]
        keys = list(cols)
        n = len(cols[keys[0]]) if keys else 0
        rows = [{k: cols[k][i] for k in keys} for i in range(n)]
        paths.append(write_table(rows, keys, directory / f"{stem}-{name}.csv"))
    for name in sorted(record.tables):
        paths.append(write_table(record.tables[name], RATIO_COLUMNS, directory / f"{stem}-{name}.csv"))
    return paths


def ratio_rows(ids, params, ratios, bounds) -> list:
    """Rows of a ratio table; ``pass`` is ``ratio <= bound``."""
    rows = []
    for i, x, r, b in zip(ids, params, ratios, bounds):
        r, b = float(r), float(b)
        rows.append({"candidate_id": i, "n_or_lambda": x, "ratio": r, "bound": b, "pass": bool(r <= b)})
    return rows
