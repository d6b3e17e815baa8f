"""Uniform cell grids on a box and boolean pixel sets living on them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MASK_MAGIC = "fracshape-mask v1"


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class BoxGrid:
    """Cell-centred grid on the box ``Q = prod [a_d, b_d]``.

    Cell ``(i_0, ..., i_{n-1})`` has centre ``a_d + (i_d + 1/2) h`` on every
    axis. Flat indices are C-ordered over ``shape``.
    """

    dim: int
    extent: tuple[tuple[float, float], ...]
    cells_per_axis: tuple[int, ...]
    h: float = field(init=False)

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise GridError(f"unsupported dimension {self.dim}; expected 1 or 2")
        if len(self.extent) != self.dim or len(self.cells_per_axis) != self.dim:
            raise GridError("extent and cells_per_axis must have one entry per axis")
        widths = []
        for (a, b), k in zip(self.extent, self.cells_per_axis):
            if not (math.isfinite(a) and math.isfinite(b)) or b <= a:
                raise GridError(f"degenerate extent [{a}, {b}]")
            if int(k) != k or k < 2:
                raise GridError(f"need at least 2 cells per axis, got {k}")
            widths.append((b - a) / k)
        if any(not math.isclose(w, widths[0], rel_tol=1e-12) for w in widths):
            raise GridError(f"cell width differs across axes: {widths}")
        object.__setattr__(self, "h", widths[0])

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.cells_per_axis)

    @property
    def n_cells(self) -> int:
        return math.prod(self.cells_per_axis)

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @property
    def volume(self) -> float:
        return math.prod(b - a for a, b in self.extent)

    @property
    def lower(self) -> np.ndarray:
        return np.array([a for a, _ in self.extent])

    def multi_index(self, i):
        return np.unravel_index(i, self.shape)

    def index_to_coord(self, i) -> np.ndarray:
        """Centre of flat cell ``i`` (array of length ``dim``)."""
        mi = np.asarray(self.multi_index(i), dtype=float)
        return self.lower.reshape((-1,) + (1,) * (mi.ndim - 1)) + (mi + 0.5) * self.h

    def coord_to_index(self, x) -> int:
        """Flat index of the cell containing point ``x``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        mi = np.floor((x - self.lower) / self.h).astype(int)
        mi = np.clip(mi, 0, np.array(self.shape) - 1)
        return int(np.ravel_multi_index(tuple(mi), self.shape))

    def centers(self) -> np.ndarray:
        """Cell centres as an ``(n_cells, dim)`` array."""
        axes = [a + (np.arange(k) + 0.5) * self.h for (a, _), k in zip(self.extent, self.shape)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def scaled(self, factor: float) -> "BoxGrid":
        ext = tuple((a * factor, b * factor) for a, b in self.extent)
        return BoxGrid(self.dim, ext, self.cells_per_axis)

    def header(self) -> str:
        cells = "x".join(str(k) for k in self.shape)
        ext = ";".join(f"{a!r},{b!r}" for a, b in self.extent)
        return f"{MASK_MAGIC} dim={self.dim} cells={cells} extent={ext}"


def make_grid(dim: int, extent, cells_per_axis) -> BoxGrid:
    """Build a :class:`BoxGrid`.

    ``extent`` may be a single ``(a, b)`` pair (reused on every axis) or one
    pair per axis; ``cells_per_axis`` an int or one int per axis.
    """
    if dim not in (1, 2):
        raise GridError(f"unsupported dimension {dim}; expected 1 or 2")
    ext = np.asarray(extent, dtype=float)
    if ext.shape == (2,):
        ext = np.tile(ext, (dim, 1))
    if ext.shape != (dim, 2):
        raise GridError(f"bad extent {extent!r} for dim={dim}")
    cells = np.atleast_1d(np.asarray(cells_per_axis))
    if cells.size == 1:
        cells = np.repeat(cells, dim)
    return BoxGrid(
        dim,
        tuple((float(a), float(b)) for a, b in ext),
        tuple(int(k) for k in cells),
    )


class SetMask:
    """Immutable boolean subset of grid cells."""

    __slots__ = ("grid", "member")

    def __init__(self, grid: BoxGrid, member):
        member = np.array(member, dtype=bool).reshape(grid.shape)
        member.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "member", member)

    def __setattr__(self, name, value):
        raise AttributeError("SetMask is immutable")

    @classmethod
    def empty(cls, grid):
        return cls(grid, np.zeros(grid.shape, dtype=bool))

    @classmethod
    def full(cls, grid):
        return cls(grid, np.ones(grid.shape, dtype=bool))

    @classmethod
    def from_indices(cls, grid, indices):
        flat = np.zeros(grid.n_cells, dtype=bool)
        flat[np.asarray(list(indices), dtype=int)] = True
        return cls(grid, flat)

    @property
    def flat(self) -> np.ndarray:
        return self.member.ravel()

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.flat)

    @property
    def count(self) -> int:
        return int(self.flat.sum())

    def measure(self) -> float:
        return self.count * self.grid.cell_volume

    def _check(self, other):
        if other.grid != self.grid:
            raise GridError("masks live on different grids")

    def __or__(self, other):
        self._check(other)
        return SetMask(self.grid, self.member | other.member)

    def __and__(self, other):
        self._check(other)
        return SetMask(self.grid, self.member & other.member)

    def __sub__(self, other):
        self._check(other)
        return SetMask(self.grid, self.member & ~other.member)

    def __invert__(self):
        return SetMask(self.grid, ~self.member)

    def __le__(self, other):
        self._check(other)
        return bool(np.all(other.member[self.member]))

    def __eq__(self, other):
        if not isinstance(other, SetMask):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.member, other.member)

    def __hash__(self):
        return hash((self.grid, self.member.tobytes()))

    def __repr__(self):
        return f"SetMask({self.grid.shape}, count={self.count})"

    def components(self) -> int:
        """Number of face-connected components."""
        from scipy import ndimage

        _, n = ndimage.label(self.member)
        return int(n)

    def to_text(self) -> str:
        rows = np.atleast_2d(self.member.astype(np.uint8))
        body = "\n".join("".join(str(v) for v in row) for row in rows)
        return f"{self.grid.header()}\n{body}\n"

    def save(self, path):
        Path(path).write_text(self.to_text(), encoding="ascii")


def ball_mask(grid: BoxGrid, center, radius: float) -> SetMask:
    """Cells whose centres lie within ``radius`` of ``center``."""
    center = np.atleast_1d(np.asarray(center, dtype=float))
    for x, (a, b) in zip(center, grid.extent):
        if not a <= x <= b:
            raise GridError(f"ball centre {center.tolist()} outside the box")
    d2 = ((grid.centers() - center) ** 2).sum(axis=1)
    return SetMask(grid, d2 <= radius * radius)


def box_mask(grid: BoxGrid, lower, upper) -> SetMask:
    """Cells whose centres lie in the closed box ``[lower, upper]``."""
    c = grid.centers()
    lo = np.atleast_1d(np.asarray(lower, dtype=float))
    hi = np.atleast_1d(np.asarray(upper, dtype=float))
    return SetMask(grid, np.all((c >= lo) & (c <= hi), axis=1))


def measure(mask: SetMask) -> float:
    return mask.measure()


def parse_mask(text: str) -> SetMask:
    lines = [ln.strip() for ln in text.strip().splitlines()]
    head, rows = lines[0], lines[1:]
    if not head.startswith(MASK_MAGIC):
        raise GridError("not a fracshape mask file")
    fields = dict(tok.split("=", 1) for tok in head[len(MASK_MAGIC):].split())
    dim = int(fields["dim"])
    cells = [int(k) for k in fields["cells"].split("x")]
    extent = [tuple(float(v) for v in part.split(",")) for part in fields["extent"].split(";")]
    grid = make_grid(dim, extent, cells)
    expect = (1, cells[0]) if dim == 1 else tuple(cells)
    if len(rows) != expect[0] or any(len(r) != expect[1] or set(r) - {"0", "1"} for r in rows):
        raise GridError("mask body does not match header")
    bits = np.array([[ch == "1" for ch in r] for r in rows], dtype=bool)
    return SetMask(grid, bits.reshape(grid.shape))


def load_mask(path) -> SetMask:
    return parse_mask(Path(path).read_text(encoding="ascii"))
