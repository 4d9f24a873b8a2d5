"""Binary and CSV serialisation of fields and sinograms.

GRTF (field): ``b"GRTF"``, version u8 = 1, n u8, shape u32 per axis, origin
f64 per axis, spacing f64, values f64 row-major.

GRTS (sinogram): ``b"GRTS"``, version u8 = 1, n u8, n_s u32, n_theta u32,
s0 f64, ds f64, direction table f64 ``(n_theta, n)``, values f64 s-major.

Everything is little-endian. Complex data is not representable and raises.
"""
from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .geometry import Domain, sphere_weights
from .transform import Grid, ScalarField, Sinogram, SinogramLayout

__all__ = ["write_field", "read_field", "write_sinogram", "read_sinogram",
           "field_to_csv", "sinogram_to_csv", "write_csv", "fmt"]

VERSION = 1


def fmt(x) -> str:
    """Locale-free round-trip formatting with 17 significant digits."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % float(x)
    return str(x)


def _real(values) -> np.ndarray:
    v = np.asarray(values)
    if np.iscomplexobj(v):
        if np.any(v.imag != 0):
            raise ValueError("complex values cannot be written to GRTF/GRTS")
        v = v.real
    return np.ascontiguousarray(v, dtype="<f8")


def write_field(path, f: ScalarField) -> Path:
    path = Path(path)
    g = f.grid
    vals = _real(f.values)
    with open(path, "wb") as fh:
        fh.write(b"GRTF")
        fh.write(struct.pack("<BB", VERSION, g.n))
        fh.write(struct.pack("<" + "I" * g.n, *g.shape))
        fh.write(struct.pack("<" + "d" * g.n, *g.origin))
        fh.write(struct.pack("<d", g.spacing))
        fh.write(vals.tobytes(order="C"))
    return path


def read_field(path, pad: float = 0.25, inner: str = "box") -> ScalarField:
    """Read a GRTF file; the grid is rebuilt from origin, spacing and ``pad``."""
    data = Path(path).read_bytes()
    if data[:4] != b"GRTF":
        raise ValueError(f"{path}: not a GRTF file")
    version, n = struct.unpack_from("<BB", data, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported GRTF version {version}")
    off = 6
    shape = struct.unpack_from("<" + "I" * n, data, off)
    off += 4 * n
    origin = struct.unpack_from("<" + "d" * n, data, off)
    off += 8 * n
    (h,) = struct.unpack_from("<d", data, off)
    off += 8
    count = int(np.prod(shape))
    if len(data) - off != 8 * count:
        raise ValueError(f"{path}: payload size mismatch")
    vals = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape).astype(float)
    size = shape[0]
    L1 = -(origin[0] - 0.5 * h)
    grid = Grid(Domain(n=n, half_width=L1 / (1.0 + pad), pad=pad, inner=inner), size)
    if not np.allclose(grid.origin, origin, rtol=0, atol=1e-12 * max(1.0, L1)):
        raise ValueError(f"{path}: grid origin inconsistent with pad={pad}")
    return ScalarField(grid, vals)


def write_sinogram(path, g: Sinogram) -> Path:
    path = Path(path)
    lay = g.layout
    vals = _real(g.values)
    with open(path, "wb") as fh:
        fh.write(b"GRTS")
        fh.write(struct.pack("<BBII", VERSION, lay.n, lay.n_s, lay.n_theta))
        fh.write(struct.pack("<dd", lay.s0, lay.ds))
        fh.write(np.ascontiguousarray(lay.directions, dtype="<f8").tobytes(order="C"))
        fh.write(vals.tobytes(order="C"))
    return path


def read_sinogram(path) -> Sinogram:
    data = Path(path).read_bytes()
    if data[:4] != b"GRTS":
        raise ValueError(f"{path}: not a GRTS file")
    version, n, n_s, n_theta = struct.unpack_from("<BBII", data, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported GRTS version {version}")
    off = 4 + struct.calcsize("<BBII")
    s0, ds = struct.unpack_from("<dd", data, off)
    off += 16
    dirs = np.frombuffer(data, dtype="<f8", count=n_theta * n, offset=off).reshape(n_theta, n).astype(float)
    off += 8 * n_theta * n
    if len(data) - off != 8 * n_s * n_theta:
        raise ValueError(f"{path}: payload size mismatch")
    vals = np.frombuffer(data, dtype="<f8", count=n_s * n_theta, offset=off).reshape(n_s, n_theta).astype(float)
    lay = SinogramLayout(s0=s0, ds=ds, n_s=n_s, directions=dirs, weights=sphere_weights(n, n_theta))
    return Sinogram(lay, vals)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])
    return path


def field_to_csv(path, f: ScalarField) -> Path:
    pts = f.grid.points()
    names = ["x", "y", "z"][: f.grid.n]
    rows = (list(p) + [v] for p, v in zip(pts, _real(f.values).ravel()))
    return write_csv(path, names + ["value"], rows)


def sinogram_to_csv(path, g: Sinogram) -> Path:
    lay = g.layout
    s = lay.s_axis()
    vals = _real(g.values)
    rows = ([s[j], a] + list(lay.directions[a]) + [vals[j, a]]
            for j in range(lay.n_s) for a in range(lay.n_theta))
    header = ["s", "theta_index"] + [f"theta_{i}" for i in range(lay.n)] + ["value"]
    return write_csv(path, header, rows)
