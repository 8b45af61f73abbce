"""On-disk formats: kernel caches, sample dumps, coefficient tables, manifests.

Binary layouts (all little-endian):

    LSVK  magic "LSVK" | u32 version | f64 radius | u32 points_log2 |
          u32 k_max | u32 rows | k_max * rows * n_points f64
    ZSMP  magic "ZSMP" | u32 count | f64 t | count f64
"""

from __future__ import annotations

import csv
import hashlib
import json
import platform
import struct
from collections.abc import Iterable, Sequence
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np

from lsvx.levy_kernel import FloatArray, Mesh

if TYPE_CHECKING:
    from lsvx.expansions import Expansion

KERNEL_MAGIC = b"LSVK"
KERNEL_VERSION = 1
SAMPLE_MAGIC = b"ZSMP"

_KERNEL_HEADER = struct.Struct("<4sIdIII")
_SAMPLE_HEADER = struct.Struct("<4sId")


# ---------------------------------------------------------------------------
# Kernel cache
# ---------------------------------------------------------------------------


def save_kernel(path: Path, mesh: Mesh, powers: Sequence[FloatArray]) -> None:
    rows = powers[0].shape[0]
    header = _KERNEL_HEADER.pack(
        KERNEL_MAGIC, KERNEL_VERSION, mesh.radius, mesh.points_log2, len(powers), rows
    )
    body = np.stack(powers).astype("<f8").tobytes()
    path.write_bytes(header + body)


def load_kernel(path: Path) -> tuple[Mesh, tuple[FloatArray, ...]]:
    """Read an LSVK file; raises ValueError on a bad magic, version or size."""
    raw = path.read_bytes()
    if len(raw) < _KERNEL_HEADER.size:
        raise ValueError("truncated kernel header")
    magic, version, radius, points_log2, k_max, rows = _KERNEL_HEADER.unpack_from(raw)
    if magic != KERNEL_MAGIC:
        raise ValueError(f"bad kernel magic {magic!r}")
    if version != KERNEL_VERSION:
        raise ValueError(f"unsupported kernel version {version}")
    mesh = Mesh(radius=radius, points_log2=points_log2)
    data = np.frombuffer(raw, dtype="<f8", offset=_KERNEL_HEADER.size)
    expected = k_max * rows * mesh.n_points
    if data.size != expected:
        raise ValueError(f"kernel body has {data.size} values, expected {expected}")
    cube = data.astype(np.float64).reshape(k_max, rows, mesh.n_points)
    powers = tuple(cube[k].copy() for k in range(k_max))
    for arr in powers:
        arr.setflags(write=False)
    return mesh, powers


# ---------------------------------------------------------------------------
# Sample dumps
# ---------------------------------------------------------------------------


def write_samples(path: Path, samples: FloatArray, t: float) -> None:
    header = _SAMPLE_HEADER.pack(SAMPLE_MAGIC, samples.size, t)
    path.write_bytes(header + np.asarray(samples, dtype="<f8").tobytes())


def read_samples(path: Path) -> tuple[FloatArray, float]:
    raw = path.read_bytes()
    magic, count, t = _SAMPLE_HEADER.unpack_from(raw)
    if magic != SAMPLE_MAGIC:
        raise ValueError(f"bad sample magic {magic!r}")
    data = np.frombuffer(raw, dtype="<f8", offset=_SAMPLE_HEADER.size, count=count)
    return data.astype(np.float64), t


# ---------------------------------------------------------------------------
# Coefficient tables and curves
# ---------------------------------------------------------------------------


def expansion_header(n: int) -> list[str]:
    return (
        ["kind", "z", "n", "epsilon", "lambda_eps"]
        + [f"chat_{j}" for j in range(1, n + 1)]
        + [f"cbreve_{j}" for j in range(1, n + 1)]
    )


def expansion_to_row(expansion: Expansion) -> list[Any]:
    return [
        expansion.kind.value,
        repr(expansion.z),
        expansion.order,
        repr(expansion.epsilon),
        repr(expansion.lambda_eps),
        *(repr(float(c)) for c in expansion.prefactored),
        *(repr(float(c)) for c in expansion.normalized),
    ]


def write_expansions_csv(path: Path, expansions: Sequence[Expansion]) -> None:
    n = max((e.order for e in expansions), default=0)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(expansion_header(n))
        for exp in expansions:
            row = expansion_to_row(exp)
            pad = n - exp.order
            # Right-pad each coefficient block so columns line up across orders.
            head, chat, cbreve = row[:5], row[5 : 5 + exp.order], row[5 + exp.order :]
            writer.writerow(head + chat + [""] * pad + cbreve + [""] * pad)


def write_rows_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def write_curve(path: Path, xs: Sequence[float], ys: Sequence[float]) -> None:
    """Two-column whitespace-separated curve, gnuplot-ready."""
    lines = [f"{x!r} {y!r}" for x, y in zip(xs, ys)]
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


def _version(dist: str) -> str:
    try:
        return metadata.version(dist)
    except metadata.PackageNotFoundError:
        return "unknown"


def config_hash(config_json: str) -> str:
    return hashlib.sha256(config_json.encode()).hexdigest()


def write_manifest(
    out_dir: Path,
    config_json: str,
    seeds: Sequence[int],
    outputs: Sequence[str],
    command: str,
) -> Path:
    """Record what is needed to reproduce a run."""
    manifest = {
        "command": command,
        "config_sha256": config_hash(config_json),
        "config": json.loads(config_json),
        "seeds": list(seeds),
        "outputs": sorted(outputs),
        "versions": {
            "lsvx": _version("lsvx"),
            "numpy": np.__version__,
            "scipy": _version("scipy"),
            "python": platform.python_version(),
        },
        "created_at": datetime.now(timezone.utc).isoformat(),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path
