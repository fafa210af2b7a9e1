"""Deterministic report emission: JSON, CSV series, plain-text tables.

Same config and seed must reproduce byte-identical files, so nothing here
writes timestamps or environment-dependent content beyond the recorded
library versions, and floats go through repr (shortest round-trip form).
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np
import scipy


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    return obj


def write_json(path: str, payload: dict):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as f:
        json.dump(_jsonable(payload), f, sort_keys=True, indent=1)
        f.write("\n")


def write_series_csv(path: str, columns: dict, meta: dict | None = None):
    """Column-oriented CSV; every column documented in the emitted header."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    names = list(columns)
    n = len(next(iter(columns.values())))
    with open(path, "w") as f:
        if meta:
            for k in sorted(meta):
                f.write(f"# {k}: {meta[k]}\n")
        f.write("# columns: " + ",".join(names) + "\n")
        f.write(",".join(names) + "\n")
        for i in range(n):
            f.write(",".join(repr(float(columns[c][i])) for c in names) + "\n")


def write_text(path: str, text: str):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as f:
        f.write(text)
        if not text.endswith("\n"):
            f.write("\n")


def file_hash(path: str) -> str:
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def manifest(config_hash: str, tolerances: dict, constants: dict | None = None) -> dict:
    from . import __version__

    return {
        "package_version": __version__,
        "numpy_version": np.__version__,
        "scipy_version": scipy.__version__,
        "config_hash": config_hash,
        "tolerances": dict(tolerances),
        "constants": dict(constants or {}),
    }
