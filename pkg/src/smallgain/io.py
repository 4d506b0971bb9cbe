"""Deterministic, atomic output files.

Reports and certificates are JSON with sorted keys and non-finite floats
written as the strings ``"inf"``, ``"-inf"`` and ``"nan"``. Trajectory CSVs
have the fixed column order ``t, x, y, u1, ..., uk``.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .comparison import KLFn
from .trajectories import IOSCertificate, Trajectory, write_csv

REPORT_SCHEMA = "smallgain.report/1"
CERTIFICATE_SCHEMA = "smallgain.certificate/1"


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def _restore(obj):
    if isinstance(obj, dict):
        return {k: _restore(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_restore(v) for v in obj]
    if obj in ("inf", "-inf", "nan"):
        return float(obj)
    return obj


def atomic_write(path, write) -> Path:
    """Write through ``write(fh)`` into a temporary file, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=1, allow_nan=False) + "\n"


def write_json(path, obj) -> Path:
    text = dumps(obj)
    return atomic_write(path, lambda fh: fh.write(text))


def read_json(path):
    with open(path) as fh:
        return _restore(json.load(fh))


def write_trajectory(path, traj: Trajectory) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    os.close(fd)
    try:
        write_csv(traj, tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def beta_samples(beta: KLFn, s=None, t=None) -> dict:
    """Samples of ``beta`` on a log grid in ``s`` and a linear grid in ``t``."""
    s = np.geomspace(1e-3, 1e3, 13) if s is None else np.asarray(s, dtype=float)
    t = np.linspace(0.0, 20.0, 11) if t is None else np.asarray(t, dtype=float)
    S, T = np.meshgrid(s, t, indexing="ij")
    return {"s": s, "t": t, "values": beta(S, T)}


def certificate_record(cert: IOSCertificate, extra: dict | None = None) -> dict:
    rec = {"schema": CERTIFICATE_SCHEMA, "constant": cert.C, "samples": beta_samples(cert.beta),
           **cert.to_dict()}
    if extra:
        rec.update(extra)
    return rec


def load_certificate(path) -> IOSCertificate:
    rec = read_json(path)
    if rec.get("schema") != CERTIFICATE_SCHEMA:
        raise ValueError(f"{path}: not a certificate file (schema {rec.get('schema')!r})")
    return IOSCertificate.from_dict(rec)
