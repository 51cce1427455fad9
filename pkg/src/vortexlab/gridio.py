"""Binary snapshot formats and deterministic CSV/JSON writers.

Particle snapshot (.vxc): magic "VXC1", u32 version=1, u64 N, f64 time,
f64 sigma, then N x 2 little-endian f64 positions, row-major.

Density snapshot (.vxg): magic "VXG1", u32 version=1, u32 n, f64 L (half
width), f64 time, f64 sigma, then n^2 little-endian f64 values row-major
(values[i, j] at x = -L + i h, y = -L + j h).

CSV writers format floats with repr-compatible %.17g so identical runs are
byte-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .meanfield import DensityGrid
from .particle import ParticleEnsemble

PARTICLE_MAGIC = b"VXC1"
DENSITY_MAGIC = b"VXG1"
FORMAT_VERSION = 1


def write_particles(path: str | Path, ens: ParticleEnsemble) -> None:
    with open(path, "wb") as f:
        f.write(PARTICLE_MAGIC)
        f.write(struct.pack("<IQdd", FORMAT_VERSION, ens.n, ens.time, ens.sigma))
        f.write(np.ascontiguousarray(ens.positions, dtype="<f8").tobytes())


def read_particles(path: str | Path) -> ParticleEnsemble:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != PARTICLE_MAGIC:
            raise ValueError(f"not a particle snapshot: magic {magic!r}")
        version, n, time, sigma = struct.unpack("<IQdd", f.read(28))
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported version {version}")
        data = np.frombuffer(f.read(16 * n), dtype="<f8").reshape(n, 2)
    return ParticleEnsemble(positions=data.astype(np.float64), time=time, sigma=sigma)


def write_density(path: str | Path, grid: DensityGrid) -> None:
    with open(path, "wb") as f:
        f.write(DENSITY_MAGIC)
        f.write(
            struct.pack("<II dd d", FORMAT_VERSION, grid.n, grid.half_width, grid.time, grid.sigma)
        )
        f.write(np.ascontiguousarray(grid.values, dtype="<f8").tobytes())


def read_density(path: str | Path) -> DensityGrid:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != DENSITY_MAGIC:
            raise ValueError(f"not a density snapshot: magic {magic!r}")
        version, n, half_width, time, sigma = struct.unpack("<IIddd", f.read(32))
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported version {version}")
        vals = np.frombuffer(f.read(8 * n * n), dtype="<f8").reshape(n, n)
    return DensityGrid(
        half_width=half_width, n=int(n), values=vals.astype(np.float64), time=time, sigma=sigma
    )


def fmt_float(x: float) -> str:
    return format(float(x), ".17g")


def write_csv(path: str | Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(
            ",".join(fmt_float(v) if isinstance(v, float) else str(v) for v in row)
        )
    Path(path).write_text("\n".join(lines) + "\n")


def _json_default(o):
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"Object of type {type(o).__name__} is not JSON serializable")


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(
        json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"
    )
