"""Per-batch metrics records and their CSV / JSON outputs.

``trace.csv`` carries only quantities fixed by the config and seed, so two
identical runs produce identical bytes.  Wall-clock timings go to
``timing.csv`` and the run summary.
"""

from __future__ import annotations

import csv
import json
import statistics
from dataclasses import asdict, dataclass, fields
from pathlib import Path


class MetricsWriteError(OSError):
    pass


@dataclass
class MetricsRecord:
    batch_index: int
    accuracy: float
    n_models: int
    n_rules_total: int
    n_label: int
    n_aug: int
    n_pseudo: int
    n_pseudo_wrong: int
    drift_verdict: str
    n_extracted: int = 0
    n_fused: int = 0
    chosen_z: int = 0
    train_time_s: float = 0.0
    test_time_s: float = 0.0


TIMING_FIELDS = ("train_time_s", "test_time_s")
TRACE_FIELDS = tuple(f.name for f in fields(MetricsRecord) if f.name not in TIMING_FIELDS)
_TYPES = {f.name: f.type for f in fields(MetricsRecord)}


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def _mean_std(values) -> dict:
    values = [float(v) for v in values]
    return {"mean": statistics.fmean(values),
            "std": statistics.pstdev(values) if len(values) > 1 else 0.0}


def summarize(trace: list[MetricsRecord], config: dict | None = None) -> dict:
    out = {"config": config or {}, "n_batches_scored": len(trace), "metrics": {}}
    for name in TRACE_FIELDS + TIMING_FIELDS:
        if name in ("batch_index", "drift_verdict"):
            continue
        out["metrics"][name] = _mean_std(getattr(r, name) for r in trace)
    out["drift_batches"] = [r.batch_index for r in trace if r.drift_verdict == "drift"]
    return out


def emit_metrics(trace: list[MetricsRecord], out_dir, config: dict | None = None) -> dict:
    """Write ``trace.csv``, ``timing.csv`` and ``summary.json`` into ``out_dir``."""
    if not trace:
        raise ValueError("cannot emit metrics for an empty trace")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "trace.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_FIELDS)
            for r in trace:
                w.writerow([_fmt(getattr(r, k)) for k in TRACE_FIELDS])
        with open(out_dir / "timing.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("batch_index",) + TIMING_FIELDS)
            for r in trace:
                w.writerow([r.batch_index] + [_fmt(getattr(r, k)) for k in TIMING_FIELDS])
        summary = summarize(trace, config)
        (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise MetricsWriteError(f"cannot write metrics to {out_dir}: {exc}") from exc
    return summary


def read_trace(path) -> list[MetricsRecord]:
    """Parse a ``trace.csv`` (and a sibling ``timing.csv`` when present)."""
    path = Path(path)
    timings = {}
    tpath = path.with_name("timing.csv")
    if tpath.exists():
        with open(tpath, newline="") as fh:
            for row in csv.DictReader(fh):
                timings[int(row["batch_index"])] = {k: float(row[k]) for k in TIMING_FIELDS}
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            vals = {}
            for k, v in row.items():
                typ = str(_TYPES[k])
                vals[k] = int(v) if typ == "int" else float(v) if typ == "float" else v
            vals.update(timings.get(vals["batch_index"], {}))
            out.append(MetricsRecord(**vals))
    return out
