"""CSV and JSON output with exact float round-trips."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return "%.17g" % v
    return str(value)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path) -> tuple[list, dict]:
    """Header and columns; numeric columns come back as float arrays."""
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = list(r)
    cols = {}
    for j, name in enumerate(header):
        raw = [row[j] for row in rows]
        try:
            cols[name] = np.array([float(v) if v != "" else math.nan for v in raw])
        except ValueError:
            cols[name] = raw
    return header, cols


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _clean(obj):
    # JSON has no inf/nan; emit them as strings
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_clean(json.loads(json.dumps(obj, default=_default))), indent=2, sort_keys=True)
    path.write_text(text + "\n")
    return path


def levy_fit_record(fit, model=None, critical=None) -> dict:
    """JSON record for one spectrum fit with optional width model and critical analysis."""
    rec = {"time": fit.time, "eta": fit.eta, "dl": fit.dl, "n_freq": fit.n_freq, "residual": fit.residual}
    if model is not None:
        rec["model"] = {k: getattr(model, k) for k in ("a", "b", "c") if hasattr(model, k)}
    if critical is not None:
        rec["critical"] = {
            "eta_star": critical.eta_star,
            "bounds": [list(b) for b in critical.bounds],
            "transitions": list(critical.transitions) if critical.transitions else None,
            "regime": critical.regime,
        }
    return rec
