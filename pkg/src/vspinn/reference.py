"""Reference fields on tensor grids: an Allen-Cahn solver and a CSV grid format.

Grid CSV layout (UTF-8, comma separated)::

    n_1,n_2,...,n_d          axis sizes
    a_1[0],...,a_1[n_1-1]    one row of values per axis
    ...
    name_1,...,name_F        field names
    v,...                    one row per grid node, row-major over the axes

Row-major means the last axis varies fastest.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .problems import AC_DIFFUSION

AC_REACTION = 5.0
MIN_NX = 256
MIN_NT = 1000


class ReferenceFormatError(ValueError):
    """A grid file that does not follow the CSV layout."""


@dataclass
class ReferenceGrid:
    axes: tuple[np.ndarray, ...]
    values: np.ndarray  # shape (*axis lengths, n_fields)
    fields: tuple[str, ...] = ("u",)
    note: str = ""

    def __post_init__(self):
        self.axes = tuple(np.asarray(a, dtype=np.float64) for a in self.axes)
        self.values = np.asarray(self.values, dtype=np.float64)
        for i, a in enumerate(self.axes):
            if a.ndim != 1 or len(a) < 1:
                raise ReferenceFormatError(f"axis {i} must be a non-empty 1D array")
            if np.any(np.diff(a) <= 0):
                raise ReferenceFormatError(f"axis {i} is not strictly increasing")
        shape = tuple(len(a) for a in self.axes) + (len(self.fields),)
        if self.values.shape != shape:
            raise ReferenceFormatError(f"values have shape {self.values.shape}, expected {shape}")

    def points(self) -> np.ndarray:
        """Grid nodes, row-major, shape (M, d)."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def flat_values(self) -> np.ndarray:
        return self.values.reshape(-1, len(self.fields))


def allen_cahn_reference(nx: int = 512, nt: int = 10000, n_out: int = 101) -> ReferenceGrid:
    """Allen-Cahn field on [-1, 1] x [0, 1] by IMEX time stepping.

    Diffusion is implicit with a fourth-order periodic finite-difference
    Laplacian (diagonal in Fourier space); the cubic reaction is explicit.
    The grid has ``nx`` periodic cells, and x = 1 repeats the x = -1 node.
    ``n_out`` evenly spaced time slices are returned, including t = 0 and 1.
    """
    if nx < MIN_NX or nt < MIN_NT:
        raise ValueError(f"resolution below floor: need nx >= {MIN_NX} and nt >= {MIN_NT}")
    if n_out < 2 or (nt % (n_out - 1)) != 0:
        raise ValueError("n_out - 1 must divide nt")
    h = 2.0 / nx
    x = -1.0 + h * np.arange(nx)
    u = x**2 * np.cos(math.pi * x)
    dt = 1.0 / nt
    theta = 2.0 * math.pi * np.fft.rfftfreq(nx)
    symbol = (30.0 - 32.0 * np.cos(theta) + 2.0 * np.cos(2.0 * theta)) / (12.0 * h * h)
    denom = 1.0 + dt * AC_DIFFUSION * symbol
    stride = nt // (n_out - 1)
    slices = [u.copy()]
    for n in range(1, nt + 1):
        rhs = u + dt * AC_REACTION * (u - u**3)
        u = np.fft.irfft(np.fft.rfft(rhs) / denom, nx)
        if n % stride == 0:
            slices.append(u.copy())
    field = np.array(slices).T  # (x, t)
    field = np.concatenate([field, field[:1]], axis=0)
    xs = np.append(x, 1.0)
    ts = np.linspace(0.0, 1.0, n_out)
    # the initial slice is set from the formula so that it is exact at every node
    field[:, 0] = xs**2 * np.cos(math.pi * xs)
    note = f"allen_cahn IMEX nx={nx} nt={nt}"
    return ReferenceGrid((xs, ts), field[..., None], ("u",), note)


def _row(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def save_reference(grid: ReferenceGrid, path) -> None:
    lines = [",".join(str(len(a)) for a in grid.axes)]
    lines += [_row(a) for a in grid.axes]
    lines.append(",".join(grid.fields))
    lines += [_row(r) for r in grid.flat_values()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_reference(path) -> ReferenceGrid:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    where = str(path)
    try:
        sizes = [int(s) for s in lines[0].split(",")]
    except (IndexError, ValueError) as exc:
        raise ReferenceFormatError(f"{where}: first row must list axis sizes") from exc
    d = len(sizes)
    if len(lines) < d + 2:
        raise ReferenceFormatError(f"{where}: expected {d} axis rows and a field-name row")
    axes = []
    for i in range(d):
        vals = [float(v) for v in lines[1 + i].split(",")]
        if len(vals) != sizes[i]:
            raise ReferenceFormatError(f"{where}: axis {i} has {len(vals)} values, header says {sizes[i]}")
        axes.append(np.array(vals))
    fields = tuple(f.strip() for f in lines[1 + d].split(","))
    if not fields or any(not f for f in fields):
        raise ReferenceFormatError(f"{where}: empty field name")
    body = lines[2 + d:]
    n_nodes = int(np.prod(sizes))
    if len(body) != n_nodes:
        raise ReferenceFormatError(f"{where}: {len(body)} value rows, expected {n_nodes}")
    rows = []
    for k, ln in enumerate(body):
        vals = ln.split(",")
        if len(vals) != len(fields):
            raise ReferenceFormatError(f"{where}: value row {k} has {len(vals)} columns, expected {len(fields)}")
        rows.append([float(v) for v in vals])
    values = np.array(rows).reshape(*sizes, len(fields))
    return ReferenceGrid(tuple(axes), values, fields, note=f"loaded from {Path(path).name}")
