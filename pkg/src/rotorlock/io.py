"""File formats.

Text outputs are CSV files whose leading ``#`` lines carry provenance:

    # rotorlock 0.1.0
    # command: simulate
    # seed: 0
    # config: {...fully resolved configuration as one-line JSON...}
    # columns: t_s,alpha_rad,omega_rad_s,h

Binary trajectory records are little-endian:

    8 bytes   magic b"RLTRAJ01"
    uint32    header length H
    H bytes   UTF-8 JSON header (configuration, coefficients, drive, columns)
    uint64    sample count n
    n x 3     float64 (t [s], alpha [rad], omega [rad/s]) per sample
"""

from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np

from rotorlock import __version__

MAGIC = b"RLTRAJ01"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True)


def provenance(command: str, config: dict, seed: int | None) -> list[str]:
    return [
        f"rotorlock {__version__}",
        f"command: {command}",
        f"seed: {seed}",
        f"config: {dumps(config)}",
    ]


def write_csv(path, columns, rows, header_lines=()) -> Path:
    """``rows`` is a 2-D array or an iterable of row sequences."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(f"# columns: {','.join(columns)}\n")
        if isinstance(rows, np.ndarray) and rows.dtype.kind == "f":
            np.savetxt(fh, rows, delimiter=",", fmt="%.17g")
        else:
            w = csv.writer(fh, lineterminator="\n")
            for row in rows:
                w.writerow([_fmt(v) for v in row])
    return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_json(path, obj, header: dict | None = None) -> Path:
    path = Path(path)
    doc = dict(obj)
    if header is not None:
        doc = {"provenance": header, **doc}
    path.write_text(json.dumps(_jsonable(doc), sort_keys=True, indent=2) + "\n")
    return path


def read_header(path) -> dict:
    """Parse the ``# key: value`` provenance lines of a CSV output."""
    out = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            body = line[1:].strip()
            if ": " in body:
                key, val = body.split(": ", 1)
                out[key] = val
    if "config" in out:
        out["config"] = json.loads(out["config"])
    if "columns" in out:
        out["columns"] = out["columns"].split(",")
    return out


def read_csv(path) -> tuple[dict, np.ndarray]:
    """Header and numeric body of a CSV written by :func:`write_csv`."""
    header = read_header(path)
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    return header, data


def read_trace_csv(path):
    """(time, value) columns of a trace file."""
    header, data = read_csv(path)
    if data.shape[1] < 2 or data.shape[0] < 2:
        raise ValueError(f"{path}: a trace needs at least two rows of (t, value)")
    return header, data[:, 0], data[:, 1]


def write_trajectory_csv(path, traj, header_lines=()) -> Path:
    rows = np.column_stack((traj.time, traj.alpha, traj.omega, traj.polarization.astype(float)))
    return write_csv(path, ["t_s", "alpha_rad", "omega_rad_s", "h"], rows, header_lines)


def write_trajectory_binary(path, traj, header: dict) -> Path:
    path = Path(path)
    meta = dict(header)
    meta.update(
        {
            "coefficients": traj.coeffs.as_dict(),
            "drive": {"frequency": traj.drive.frequency, "duty": traj.drive.duty},
            "samples_per_period": traj.samples_per_period,
            "n_periods": traj.n_periods,
            "columns": ["t_s", "alpha_rad", "omega_rad_s"],
        }
    )
    blob = dumps(meta).encode("utf-8")
    data = np.column_stack((traj.time, traj.alpha, traj.omega)).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<Q", data.shape[0]))
        fh.write(data.tobytes(order="C"))
    return path


def read_trajectory_binary(path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise ValueError(f"{path}: not a rotorlock trajectory record")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        (n,) = struct.unpack("<Q", fh.read(8))
        data = np.frombuffer(fh.read(n * 24), dtype="<f8")
    if data.size != 3 * n:
        raise ValueError(f"{path}: truncated record")
    return header, data.reshape(n, 3)
