"""Binary field/ensemble formats and the space-time manifest.

KRLF1 (one lattice field)::

    8-byte magic b"KRLF1\\0\\0\\0"
    <u32 d> <u32 components> <u32 Nx> <u32 Nv> <f64 Lx> <f64 Lv>   (little-endian)
    f64 samples, row-major, position axes outermost, component innermost

KRLE1 (path ensemble)::

    8-byte magic b"KRLE1\\0\\0\\0"
    <u32 d> <u32 K> <u32 M> <f64 T> <u64 seed>
    f64 states shaped (M, K+1, 2d), path-major
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .lattice import AnisotropicLattice, LatticeField

FIELD_MAGIC = b"KRLF1\0\0\0"
ENSEMBLE_MAGIC = b"KRLE1\0\0\0"
_FIELD_HEAD = struct.Struct("<4I2d")
_ENS_HEAD = struct.Struct("<3IdQ")


def write_field(path: str | os.PathLike, field: LatticeField) -> None:
    lat = field.lattice
    head = _FIELD_HEAD.pack(lat.d, field.components, lat.Nx, lat.Nv, lat.Lx, lat.Lv)
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC + head)
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def read_field(path: str | os.PathLike) -> LatticeField:
    data = Path(path).read_bytes()
    if data[:8] != FIELD_MAGIC:
        raise ValueError(f"{path}: not a KRLF1 file")
    d, comps, nx, nv, lx, lv = _FIELD_HEAD.unpack_from(data, 8)
    lat = AnisotropicLattice(d=d, Lx=lx, Lv=lv, Nx=nx, Nv=nv)
    body = data[8 + _FIELD_HEAD.size :]
    expected = lat.n_nodes * comps * 8
    if len(body) != expected:
        raise ValueError(f"{path}: expected {expected} payload bytes, found {len(body)}")
    vals = np.frombuffer(body, dtype="<f8").reshape(lat.shape + (comps,))
    return LatticeField(lat, vals.astype(np.float64))


def write_spacetime(directory: str | os.PathLike, field) -> Path:
    """Write every slice as KRLF1 plus ``manifest.txt``; returns the manifest path."""
    from .semigroup import SpaceTimeField  # noqa: F401  (type only)

    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"T={field.grid.T!r}", f"K={field.grid.K}"]
    for k in range(field.grid.K + 1):
        name = f"slice_{k:05d}.krlf"
        write_field(out / name, field.slice(k))
        lines.append(name)
    manifest = out / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def read_spacetime(directory: str | os.PathLike):
    from .semigroup import SpaceTimeField, TimeGrid

    base = Path(directory)
    lines = [ln.strip() for ln in (base / "manifest.txt").read_text().splitlines() if ln.strip()]
    meta = dict(ln.split("=", 1) for ln in lines if "=" in ln)
    names = [ln for ln in lines if "=" not in ln]
    grid = TimeGrid(float(meta["T"]), int(meta["K"]))
    if len(names) != grid.K + 1:
        raise ValueError(f"manifest lists {len(names)} slices, expected {grid.K + 1}")
    slices = [read_field(base / n) for n in names]
    lat = slices[0].lattice
    if any(s.lattice != lat for s in slices):
        raise ValueError("manifest slices live on different lattices")
    return SpaceTimeField(grid, lat, np.stack([s.values for s in slices]))


def write_ensemble_binary(path: str | os.PathLike, states: np.ndarray, T: float, seed: int) -> None:
    states = np.asarray(states, dtype="<f8")
    M, K1, two_d = states.shape
    head = _ENS_HEAD.pack(two_d // 2, K1 - 1, M, float(T), int(seed) & (2**64 - 1))
    with open(path, "wb") as fh:
        fh.write(ENSEMBLE_MAGIC + head)
        fh.write(np.ascontiguousarray(states).tobytes())


def read_ensemble_binary(path: str | os.PathLike) -> tuple[np.ndarray, float, int]:
    data = Path(path).read_bytes()
    if data[:8] != ENSEMBLE_MAGIC:
        raise ValueError(f"{path}: not a KRLE1 file")
    d, K, M, T, seed = _ENS_HEAD.unpack_from(data, 8)
    body = np.frombuffer(data[8 + _ENS_HEAD.size :], dtype="<f8")
    if body.size != M * (K + 1) * 2 * d:
        raise ValueError(f"{path}: truncated ensemble payload")
    return body.reshape(M, K + 1, 2 * d).astype(np.float64), T, seed


def write_ensemble_csv(path: str | os.PathLike, states: np.ndarray, times: np.ndarray) -> None:
    M, K1, two_d = states.shape
    d = two_d // 2
    header = ["path", "t"] + [f"x{i}" for i in range(d)] + [f"v{i}" for i in range(d)]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for m in range(M):
            for k in range(K1):
                row = [str(m), repr(float(times[k]))] + [repr(float(s)) for s in states[m, k]]
                fh.write(",".join(row) + "\n")


def read_ensemble_csv(path: str | os.PathLike) -> tuple[np.ndarray, np.ndarray]:
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    M = int(raw[:, 0].max()) + 1
    K1 = raw.shape[0] // M
    states = raw[:, 2:].reshape(M, K1, -1)
    return states, raw[:K1, 1]
