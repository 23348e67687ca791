"""CFF1 field files and phase-point manifests.

A CFF1 file stores one tensor field sampled on a periodic lattice.  The
format is a short ASCII header followed by a data block::

    CFF1
    n=<int>
    shape=<rank descriptor>
    points=<p1,...,pn>
    period=<real>
    format=<binary|text>
    <data block>

The rank descriptor is one of ``scalar``, ``vector``, ``covector``,
``sym2cov``, ``sym2con`` (see :data:`constraint_forge.grid.RANK_DESCRIPTORS`).
The data block holds 64-bit floats in row-major grid order with tensor
components fastest-varying; symmetric rank-2 fields store only the upper
triangle, row-major (i <= j), so stored symmetry is exact by construction.
``binary`` blocks are raw little-endian IEEE-754 bytes and round-trip
bit-exactly; ``text`` blocks hold one ``repr`` per line, which also restores
the exact double.

A phase-point manifest is a JSON object naming the component files of a
(metric, momentum) pair together with the lattice configuration::

    {"n": 3, "points": 16, "period": 6.283185307179586,
     "tau": 0.3, "kappa": 0.0, "lambda": 0.27,
     "fields": {"g": "g.cff", "pi": "pi.cff"}}

Field paths are relative to the manifest location.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .grid import Grid, GridSpec

_HEADER_MAGIC = "CFF1"
_SYM_DESCRIPTORS = ("sym2", "sym2cov", "sym2con")


def _triangle_pairs(n: int):
    return [(i, j) for i in range(n) for j in range(i, n)]


def component_count(n: int, shape: str) -> int:
    if shape == "scalar":
        return 1
    if shape in ("vector", "covector"):
        return n
    if shape in _SYM_DESCRIPTORS:
        return n * (n + 1) // 2
    raise ValueError(f"unknown rank descriptor {shape!r}")


def _to_component_block(field: np.ndarray, n: int, shape: str) -> np.ndarray:
    """Stack components on a trailing axis (fastest-varying on disk)."""
    if shape == "scalar":
        comps = field[np.newaxis]
    elif shape in ("vector", "covector"):
        comps = field
    else:
        comps = np.stack([field[i, j] for (i, j) in _triangle_pairs(n)])
    return np.ascontiguousarray(np.moveaxis(comps, 0, -1))


def _from_component_block(block: np.ndarray, n: int, shape: str) -> np.ndarray:
    comps = np.moveaxis(block, -1, 0)
    if shape == "scalar":
        return np.ascontiguousarray(comps[0])
    if shape in ("vector", "covector"):
        return np.ascontiguousarray(comps)
    grid_shape = comps.shape[1:]
    out = np.empty((n, n) + grid_shape)
    for comp, (i, j) in zip(comps, _triangle_pairs(n)):
        out[i, j] = comp
        out[j, i] = comp
    return out


def write_field(path: str, grid: Grid, field: np.ndarray, shape: str,
                mode: str = "binary") -> None:
    """Write one field to a CFF1 file.  ``mode`` is ``binary`` or ``text``."""
    if mode not in ("binary", "text"):
        raise ValueError(f"unknown data mode {mode!r}")
    n = grid.spec.n
    count = component_count(n, shape)
    expected = ((n, n) if count == n * (n + 1) // 2 and shape in _SYM_DESCRIPTORS
                else ((n,) if shape in ("vector", "covector") else ()))
    if field.shape != expected + grid.shape:
        raise ValueError(
            f"field shape {field.shape} does not match descriptor {shape!r} "
            f"on grid {grid.shape}")
    block = _to_component_block(field.astype(np.float64, copy=False), n, shape)
    points = ",".join(str(p) for p in grid.shape)
    header = (
        f"{_HEADER_MAGIC}\n"
        f"n={n}\n"
        f"shape={shape}\n"
        f"points={points}\n"
        f"period={grid.spec.period!r}\n"
        f"format={mode}\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if mode == "binary":
            fh.write(block.astype("<f8").tobytes())
        else:
            lines = "\n".join(repr(float(v)) for v in block.ravel())
            fh.write(lines.encode("ascii"))
            fh.write(b"\n")


class CFFFormatError(ValueError):
    pass


def read_field(path: str):
    """Read a CFF1 file.  Returns ``(field, meta)``.

    ``meta`` is a dict with keys ``n``, ``shape``, ``points``, ``period``.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    lines = []
    offset = 0
    while len(lines) < 6:
        end = raw.find(b"\n", offset)
        if end < 0:
            raise CFFFormatError(f"{path}: truncated header")
        lines.append(raw[offset:end].decode("ascii"))
        offset = end + 1
    if lines[0] != _HEADER_MAGIC:
        raise CFFFormatError(f"{path}: not a CFF1 file")
    fields = {}
    for line in lines[1:]:
        key, _, value = line.partition("=")
        fields[key] = value
    try:
        n = int(fields["n"])
        shape = fields["shape"]
        points = tuple(int(v) for v in fields["points"].split(","))
        period = float(fields["period"])
        mode = fields["format"]
    except (KeyError, ValueError) as exc:
        raise CFFFormatError(f"{path}: malformed header ({exc})") from exc
    if len(points) != n:
        raise CFFFormatError(f"{path}: points list does not match n={n}")
    count = component_count(n, shape)
    total = count
    for p in points:
        total *= p
    if mode == "binary":
        data = np.frombuffer(raw[offset:], dtype="<f8")
    elif mode == "text":
        data = np.array([float(v) for v in raw[offset:].split()], dtype=np.float64)
    else:
        raise CFFFormatError(f"{path}: unknown data format {mode!r}")
    if data.size != total:
        raise CFFFormatError(
            f"{path}: expected {total} values, found {data.size}")
    block = data.reshape(points + (count,))
    meta = {"n": n, "shape": shape, "points": points, "period": period}
    return _from_component_block(block, n, shape), meta


# ------------------------------------------------------------------- manifests

def write_manifest(path: str, spec: GridSpec, field_files: dict) -> None:
    doc = {
        "n": spec.n,
        "points": spec.points_per_axis,
        "period": spec.period,
        "tau": spec.tau,
        "kappa": spec.kappa,
        "lambda": spec.lam,
        "fields": dict(field_files),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path: str):
    """Read a phase-point manifest.  Returns ``(spec, {name: abspath})``."""
    with open(path) as fh:
        doc = json.load(fh)
    try:
        spec = GridSpec(
            n=int(doc["n"]),
            points_per_axis=int(doc["points"]),
            period=float(doc["period"]),
            tau=float(doc["tau"]),
            kappa=float(doc["kappa"]),
            lam=float(doc["lambda"]),
        )
        files = doc["fields"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CFFFormatError(f"{path}: malformed manifest ({exc})") from exc
    base = os.path.dirname(os.path.abspath(path))
    resolved = {name: os.path.join(base, rel) for name, rel in files.items()}
    return spec, resolved
