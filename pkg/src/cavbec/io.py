"""On-disk formats: CSV tables, binary field containers and run manifests.

Field container layout: one UTF-8 JSON header line terminated by ``\\n``,
then the raw little-endian samples.  ``dtype`` is ``"c128-le"`` (complex,
interleaved re/im float64) or ``"f64-le"`` (real float64); samples are
stored time-major, i.e. row t holds all grid points at ``times[t]``.
"""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import SpatialGrid

FORMAT_VERSION = 1
FIELD_MAGIC = "cavbec-fields"

_DTYPES = {"c128-le": np.dtype("<c16"), "f64-le": np.dtype("<f8")}


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    # repr round-trips float64 exactly
    return repr(float(v))


def write_csv(path, columns: Mapping[str, Sequence]) -> Path:
    """Write equally long columns with a header row; floats keep full precision."""
    path = Path(path)
    names = list(columns)
    cols = [np.asarray(columns[n]) for n in names]
    rows = {len(c) for c in cols}
    if len(rows) > 1:
        raise ValueError(f"columns have different lengths: {sorted(rows)}")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(rows.pop() if rows else 0):
            w.writerow([_fmt(c[i]) for c in cols])
    return path


def read_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        names = next(r)
        data = [row for row in r]
    out = {}
    for j, n in enumerate(names):
        out[n] = np.array([float(row[j]) if row[j] != "" else np.nan for row in data])
    return out


def write_fields(path, grid: SpatialGrid, times: Sequence[float], values: np.ndarray,
                 dtype: str = "c128-le", extra: Optional[dict] = None) -> Path:
    """Write a (n_times, n_points) array as a binary field container."""
    if dtype not in _DTYPES:
        raise ValueError(f"dtype must be one of {sorted(_DTYPES)}")
    arr = np.asarray(values)
    times = np.asarray(times, dtype=float)
    if arr.ndim != 2 or arr.shape != (times.size, grid.n_points):
        raise ValueError(f"expected shape {(times.size, grid.n_points)}, got {arr.shape}")
    header = {
        "format": FIELD_MAGIC,
        "version": FORMAT_VERSION,
        "dtype": dtype,
        "layout": "time-major, interleaved re/im" if dtype == "c128-le" else "time-major",
        "shape": [int(times.size), grid.n_points],
        "grid": {"n_points": grid.n_points, "half_width": grid.x_max,
                 "x_min": grid.x_min, "dx": grid.dx},
        "times": [float(t) for t in times],
    }
    if extra:
        header["extra"] = extra
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes())
    return path


def read_fields(path):
    """Return (header, times, values) from a field container."""
    with open(path, "rb") as fh:
        line = fh.readline()
        header = json.loads(line.decode("utf-8"))
        if header.get("format") != FIELD_MAGIC:
            raise ValueError(f"{path} is not a field container")
        dt = _DTYPES[header["dtype"]]
        data = np.frombuffer(fh.read(), dtype=dt)
    shape = tuple(header["shape"])
    if data.size != shape[0] * shape[1]:
        raise ValueError(f"{path}: payload holds {data.size} samples, header says {shape}")
    return header, np.array(header["times"]), data.reshape(shape).astype(dt.newbyteorder("="))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_manifest(path, manifest: dict) -> Path:
    """Write manifest.json atomically (sorted keys, stable formatting)."""
    path = Path(path)
    doc = dict(manifest)
    doc.setdefault("format_version", FORMAT_VERSION)
    tmp = path.with_suffix(".json.tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(doc), fh, sort_keys=True, indent=2)
        fh.write("\n")
    os.replace(tmp, path)
    return path


def read_manifest(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def record_columns(rec) -> dict:
    """CSV columns of a trajectory record.

    ``t, q1, r_meas, norm`` always, then ``adiabaticity`` and ``pop_<j>``
    when present.
    """
    cols = {"t": rec.times, "q1": rec.q1, "r_meas": rec.r_meas, "norm": rec.norm}
    if rec.adiabaticity is not None:
        cols["adiabaticity"] = rec.adiabaticity
    if rec.populations is not None:
        for j in range(rec.populations.shape[1]):
            cols[f"pop_{j + 1}"] = rec.populations[:, j]
    return cols


def stats_columns(stats) -> dict:
    """CSV columns of ensemble statistics (mean and standard error per quantity)."""
    cols = {"t": stats.times}
    for name in ("q1", "abs_q1", "r_meas", "norm", "g1"):
        m = getattr(stats, name if name == "g1" else f"mean_{name}")
        if m is not None:
            cols[f"mean_{name}" if name != "g1" else "g1"] = m
            cols[f"se_{name}"] = getattr(stats, f"se_{name}")
    if stats.mean_populations is not None:
        for j in range(stats.mean_populations.shape[1]):
            cols[f"mean_pop_{j + 1}"] = stats.mean_populations[:, j]
            cols[f"se_pop_{j + 1}"] = stats.se_populations[:, j]
    return cols
