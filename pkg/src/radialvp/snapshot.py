"""Snapshot persistence: raw little-endian float64 columns plus a JSON sidecar.

``snap_00003.bin`` holds the columns back to back; ``snap_00003.json`` holds
the layout (endianness, dtype, count, column names) and the run metadata
(time, coupling constants, config hash).  Writing what was read reproduces
both files byte for byte.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .field import ParticleEnsemble

__all__ = ["SnapshotError", "write_snapshot", "read_snapshot", "list_snapshots"]

FORMAT = "radialvp-snapshot"
VERSION = 1
_DTYPE = np.dtype("<f8")


class SnapshotError(ValueError):
    """Missing, truncated or inconsistent snapshot files."""


def _columns(ens: ParticleEnsemble):
    cols = {"theta": ens.theta, "a": ens.a, "w": ens.w}
    if ens.width_a is not None:
        cols["width_a"] = ens.width_a
    if ens.area is not None:
        cols["area"] = ens.area
    if ens.grad0 is not None:
        cols["grad0_theta"], cols["grad0_a"] = ens.grad0[:, 0], ens.grad0[:, 1]
    if ens.jac is not None:
        for k, name in enumerate(("jac11", "jac12", "jac21", "jac22")):
            cols[name] = ens.jac[:, k]
    return cols


def write_snapshot(directory, index: int, ens: ParticleEnsemble, config_hash: str = "") -> Path:
    """Write snapshot ``index``; returns the sidecar path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = directory / f"snap_{index:05d}"
    cols = _columns(ens)
    with open(stem.with_suffix(".bin"), "wb") as fh:
        for values in cols.values():
            fh.write(np.ascontiguousarray(values, dtype=_DTYPE).tobytes())
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "endianness": "little",
        "dtype": "float64",
        "count": len(ens),
        "columns": list(cols),
        "index": index,
        "t": float(ens.t),
        "q": float(ens.q),
        "lambda": float(ens.lam),
        "config_hash": config_hash,
    }
    sidecar = stem.with_suffix(".json")
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return sidecar


def read_snapshot(sidecar) -> tuple[ParticleEnsemble, dict]:
    """Load a snapshot from its JSON sidecar; returns ``(ensemble, metadata)``."""
    sidecar = Path(sidecar)
    try:
        meta = json.loads(sidecar.read_text())
    except OSError as exc:
        raise SnapshotError(f"{sidecar}: cannot read sidecar: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise SnapshotError(f"{sidecar}: corrupt sidecar: {exc}") from None
    if meta.get("format") != FORMAT or meta.get("version") != VERSION:
        raise SnapshotError(f"{sidecar}: not a version {VERSION} {FORMAT} file")
    if meta.get("endianness") != "little" or meta.get("dtype") != "float64":
        raise SnapshotError(f"{sidecar}: unsupported layout")
    binary = sidecar.with_suffix(".bin")
    try:
        raw = binary.read_bytes()
    except OSError as exc:
        raise SnapshotError(f"{binary}: cannot read data: {exc.strerror}") from None
    count, names = int(meta["count"]), list(meta["columns"])
    expected = count * len(names) * _DTYPE.itemsize
    if len(raw) != expected:
        raise SnapshotError(f"{binary}: expected {expected} bytes, found {len(raw)} (truncated or corrupt)")
    data = np.frombuffer(raw, dtype=_DTYPE).reshape(len(names), count).astype(float)
    cols = dict(zip(names, data))
    for required in ("theta", "a", "w"):
        if required not in cols:
            raise SnapshotError(f"{sidecar}: missing column {required!r}")
    grad0 = jac = None
    if "grad0_theta" in cols:
        grad0 = np.column_stack([cols["grad0_theta"], cols["grad0_a"]])
    if "jac11" in cols:
        jac = np.column_stack([cols[k] for k in ("jac11", "jac12", "jac21", "jac22")])
    ens = ParticleEnsemble(
        theta=cols["theta"],
        a=cols["a"],
        w=cols["w"],
        t=float(meta["t"]),
        q=float(meta["q"]),
        lam=float(meta["lambda"]),
        width_a=cols.get("width_a"),
        area=cols.get("area"),
        grad0=grad0,
        jac=jac,
    )
    return ens, meta


def list_snapshots(directory) -> list[Path]:
    """Sidecars in ``directory`` in index order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise SnapshotError(f"{directory}: no snapshot directory")
    found = sorted(directory.glob("snap_*.json"))
    if not found:
        raise SnapshotError(f"{directory}: no snapshots")
    return found
