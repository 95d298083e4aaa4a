"""CSV and JSON writers for fields, occupation measures, paths and reports."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, fixed indentation, numpy types unwrapped."""
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj))
    return path


def write_field_csv(path, field, radius: float | None = None) -> Path:
    """Rows ``x1..xd,value`` for lattice points (optionally only ``|x| <= radius``) plus a sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pts = field.grid.points()
    vals = field.values.ravel()
    if radius is not None:
        keep = np.einsum("ij,ij->i", pts, pts) <= radius * radius + 1e-12
        pts, vals = pts[keep], vals[keep]
    d = field.grid.dim
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(d)] + ["value"])
        for p, v in zip(pts, vals):
            w.writerow([repr(float(c)) for c in p] + [repr(float(v))])
    write_json(path.with_suffix(".json"), field.metadata())
    return path


def write_occupation_csv(path, lower, upper, masses, sidecar: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    d = np.asarray(lower).shape[1]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"min{i + 1}" for i in range(d)] + [f"max{i + 1}" for i in range(d)] + ["mass"])
        for lo, hi, m in zip(lower, upper, masses):
            w.writerow([repr(float(c)) for c in lo] + [repr(float(c)) for c in hi] + [repr(float(m))])
    write_json(path.with_suffix(".json"), sidecar)
    return path


def write_path_csv(path, sample) -> Path:
    """Rows ``t,x1..xd`` of a sampled path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    t = sample.times()
    d = sample.states.shape[1]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i + 1}" for i in range(d)])
        for ti, s in zip(t, sample.states):
            w.writerow([repr(float(ti))] + [repr(float(c)) for c in s])
    return path


def write_table_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(c)) if isinstance(c, (float, np.floating)) else c for c in r])
    return path
