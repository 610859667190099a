"""Metric records and their JSON-lines / CSV sink.

The JSON-lines file is the source of truth: the first line is a header
(``{"type": "header", ...}``) echoing the resolved config, every following
line one :class:`MetricRecord` tagged ``"type": "metric"``.

CSV column order is frozen as :data:`CSV_COLUMNS`. ``grad_norms`` is written
as ``name=value`` pairs joined by ``;`` in sorted name order; empty cells
stand for missing values.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

__all__ = ["CSV_COLUMNS", "MetricRecord", "MetricSink", "read_jsonl"]

CSV_COLUMNS = (
    "run_id",
    "step",
    "episode",
    "episodic_reward",
    "eval_reward",
    "delta_mean_abs",
    "entropy",
    "grad_norms",
    "wall_time",
)


@dataclass
class MetricRecord:
    run_id: str
    step: int
    episode: int
    episodic_reward: float | None = None
    eval_reward: float | None = None
    delta_mean_abs: float | None = None
    entropy: float | None = None
    grad_norms: dict = field(default_factory=dict)
    wall_time: float | None = None

    def to_json(self) -> str:
        d = asdict(self)
        d = {"type": "metric", **{k: _clean(v) for k, v in d.items()}}
        return json.dumps(d, sort_keys=False, allow_nan=False)

    @classmethod
    def from_json(cls, line: str) -> "MetricRecord":
        d = json.loads(line)
        d.pop("type", None)
        d["grad_norms"] = {k: _unclean(v) for k, v in (d.get("grad_norms") or {}).items()}
        for k in ("episodic_reward", "eval_reward", "delta_mean_abs", "entropy", "wall_time"):
            d[k] = _unclean(d.get(k))
        return cls(**d)

    def csv_row(self) -> list:
        norms = ";".join(f"{k}={_fmt(v)}" for k, v in sorted(self.grad_norms.items()))
        return [self.run_id, self.step, self.episode, _fmt(self.episodic_reward),
                _fmt(self.eval_reward), _fmt(self.delta_mean_abs), _fmt(self.entropy),
                norms, _fmt(self.wall_time)]


def _clean(v):
    # JSON has no inf/nan; encode them as strings so records still round-trip
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    return v


def _unclean(v):
    if isinstance(v, str) and v in ("inf", "-inf", "nan"):
        return float(v)
    return v


def _fmt(v):
    return "" if v is None else repr(float(v))


class MetricSink:
    """Append-only writer for one run's metrics.

    ``header`` (a dict) is written as the first JSON line. Use as a context
    manager or call :meth:`close`.
    """

    def __init__(self, jsonl_path, csv_path=None, header: dict | None = None):
        self.jsonl_path = Path(jsonl_path)
        self.csv_path = Path(csv_path) if csv_path else None
        self._last_step = None
        self._json = open(self.jsonl_path, "w", encoding="utf-8", newline="\n")
        if header is not None:
            self._json.write(json.dumps({"type": "header", **header}, sort_keys=True, default=str) + "\n")
        self._csv_file = None
        if self.csv_path is not None:
            self._csv_file = open(self.csv_path, "w", encoding="utf-8", newline="")
            self._csv = csv.writer(self._csv_file, lineterminator="\n")
            self._csv.writerow(CSV_COLUMNS)

    def write(self, record: MetricRecord):
        if self._last_step is not None and record.step < self._last_step:
            raise ValueError(f"metric step went backwards: {record.step} < {self._last_step}")
        self._last_step = record.step
        self._json.write(record.to_json() + "\n")
        if self._csv_file is not None:
            self._csv.writerow(record.csv_row())

    def flush(self):
        self._json.flush()
        if self._csv_file is not None:
            self._csv_file.flush()

    def close(self):
        self._json.close()
        if self._csv_file is not None:
            self._csv_file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_jsonl(path):
    """Return ``(header_or_None, [MetricRecord, ...])``."""
    header, records = None, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            if d.get("type") == "header":
                header = d
            else:
                records.append(MetricRecord.from_json(line))
    return header, records
