"""Binary grid files and CSV tables.

Grid format: magic "PRD3", format version as 32-bit little-endian
unsigned, rank (32-bit LE unsigned), then per axis a 64-bit LE unsigned
length and a 64-bit LE IEEE spacing, then the payload as 64-bit LE IEEE
floats in row-major order (t slowest, last axis fastest).

The spacing slot records a single step per axis, so nonuniform axes
(the stretched z grid of reconstructed fields) store their first step
there and ship the actual coordinates in a CSV sidecar next to the
grid file; readers that care about z positions use the sidecar.
"""

import struct

import numpy as np

MAGIC = b"PRD3"
VERSION = 1


def axis_spacing(x):
    """First step of a coordinate axis (exact for uniform axes)."""
    x = np.asarray(x, dtype=float)
    return float(x[1] - x[0]) if x.size > 1 else 0.0


def write_grid(path, array, spacings):
    """Write one array; spacings must give one step per axis."""
    a = np.ascontiguousarray(np.asarray(array, dtype="<f8"))
    spacings = [float(s) for s in spacings]
    if a.ndim != len(spacings):
        raise ValueError(f"rank {a.ndim} array with {len(spacings)} spacings")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, a.ndim))
        for n, h in zip(a.shape, spacings):
            fh.write(struct.pack("<Qd", n, h))
        fh.write(a.tobytes(order="C"))


def read_grid(path):
    """Read a grid file back as (array, spacings)."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a PRD3 grid file")
        version, rank = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported format version {version}")
        shape, spacings = [], []
        for _ in range(rank):
            n, h = struct.unpack("<Qd", fh.read(16))
            shape.append(int(n))
            spacings.append(h)
        count = int(np.prod(shape)) if shape else 1
        payload = fh.read(8 * count)
        if len(payload) != 8 * count:
            raise ValueError(f"{path}: truncated payload")
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after payload")
    data = np.frombuffer(payload, dtype="<f8").reshape(shape)
    return data.astype(float), spacings


def write_table(path, header, columns):
    """CSV with '.' decimals and LF endings; one row per node."""
    cols = [np.asarray(c, dtype=float).ravel() for c in columns]
    if len(cols) != len(header):
        raise ValueError("header/column count mismatch")
    n = cols[0].size
    if any(c.size != n for c in cols):
        raise ValueError("ragged columns")
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*cols):
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")


def write_field_table(path, axes, fields):
    """Flatten a tensor-product field set to one CSV row per node.

    axes: list of (name, coordinates); fields: list of (name, array) with
    array shape equal to the axis-length tuple.
    """
    shape = tuple(len(a[1]) for a in axes)
    mesh = np.meshgrid(*[np.asarray(a[1], dtype=float) for a in axes],
                       indexing="ij")
    header = [a[0] for a in axes] + [f[0] for f in fields]
    columns = list(mesh)
    for fname, arr in fields:
        arr = np.asarray(arr, dtype=float)
        if arr.shape != shape:
            raise ValueError(f"field {fname}: shape {arr.shape} != {shape}")
        columns.append(arr)
    write_table(path, header, columns)
