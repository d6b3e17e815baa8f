"""Kernel quantities for the singular kernel ``|x - y|^{-(n+2s)}`` on cell grids.

Weights are "point-to-cell": the interaction of cell ``i`` with cell ``j`` is
``h^n * int_{C_j} |x_i - y|^{-(n+2s)} dy``. The central cell is handled by a
second-order Taylor expansion, which puts an extra weight on the ``2n``
nearest neighbours. With that correction the scheme stays finite for every
``s < 1`` and collapses onto the 3/5-point Laplacian as ``s -> 1``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import integrate, special

from .grid import BoxGrid

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


class KernelError(ValueError):
    pass


def sphere_measure(n: int) -> float:
    """Surface measure of the unit sphere in R^n (2 for n=1, 2*pi for n=2)."""
    return 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)


def _check_s(s, allow_one=False):
    hi_ok = s <= 1 if allow_one else s < 1
    if not (0 < s and hi_ok):
        raise KernelError(f"fractional order s={s} outside {'(0,1]' if allow_one else '(0,1)'}")


def cns(n: int, s: float) -> float:
    """Normalisation constant ``c(n,s)`` of the fractional Laplacian.

    Closed form ``s 4^s Gamma(n/2+s) / (pi^{n/2} Gamma(1-s))``; the defining
    integral is evaluated independently by :func:`cns_quadrature`.
    """
    _check_s(s)
    if n not in (1, 2):
        raise KernelError(f"unsupported dimension {n}")
    return s * 4.0**s * math.gamma(n / 2 + s) / (math.pi ** (n / 2) * math.gamma(1 - s))


def cns_quadrature(n: int, s: float) -> float:
    """``c(n,s)`` as the reciprocal of ``int_{R^n} (1-cos z_1) |z|^{-n-2s} dz``.

    The 1D integral is split at ``t = 1``: the inner piece uses an algebraic
    weight for the ``t^{1-2s}`` behaviour, the outer piece is
    ``1/(2s) - int_1^inf cos(t) t^{-1-2s} dt`` with a Fourier-type rule. In 2D
    the transverse variable integrates out to ``int (1+t^2)^{-1-s} dt``.
    """
    _check_s(s)
    inner, _ = integrate.quad(
        lambda t: 0.5 * np.sinc(t / (2.0 * math.pi)) ** 2,  # (1 - cos t)/t^2 without cancellation
        0.0, 1.0, weight="alg", wvar=(1.0 - 2.0 * s, 0.0), epsabs=0.0, epsrel=1e-13,
    )
    osc, _ = integrate.quad(
        lambda t: t ** (-1.0 - 2.0 * s), 1.0, np.inf, weight="cos", wvar=1.0,
        epsabs=1e-12, limlst=200,
    )
    one_d = 2.0 * (inner + 1.0 / (2.0 * s) - osc)
    if n == 1:
        return 1.0 / one_d
    if n == 2:
        transverse, _ = integrate.quad(
            lambda t: (1.0 + t * t) ** (-1.0 - s), -np.inf, np.inf, epsabs=0.0, epsrel=1e-13
        )
        return 1.0 / (one_d * transverse)
    raise KernelError(f"unsupported dimension {n}")


def cns_limit(n: int) -> float:
    """Limit of ``c(n,s)/(1-s)`` as ``s -> 1``: ``4n / |S^{n-1}|``."""
    return 4.0 * n / sphere_measure(n)


@dataclass(frozen=True)
class FracParam:
    s: float
    dim: int

    def __post_init__(self):
        _check_s(self.s, allow_one=True)
        if self.dim not in (1, 2):
            raise KernelError(f"unsupported dimension {self.dim}")

    @property
    def classical(self) -> bool:
        return self.s == 1

    @property
    def cns(self) -> float:
        return math.nan if self.classical else cns(self.dim, self.s)


def cos_power_integral(alpha, p: float):
    """``int_0^alpha cos(phi)^p dphi`` for ``0 <= alpha <= pi/2`` and ``p > -1``."""
    alpha = np.asarray(alpha, dtype=float)
    a, b = 0.5, 0.5 * (p + 1.0)
    return 0.5 * special.beta(a, b) * special.betainc(a, b, np.sin(alpha) ** 2)


def _signed_cos_power(alpha, p):
    alpha = np.asarray(alpha, dtype=float)
    return np.sign(alpha) * cos_power_integral(np.abs(alpha), p)


def unit_cell_weight(dim: int, s: float, offsets) -> np.ndarray:
    """``int_{C_k} |z|^{-n-2s} dz`` over unit cells centred at integer offsets ``k != 0``."""
    k = np.atleast_2d(np.abs(np.asarray(offsets, dtype=float)))
    if dim == 1:
        k = k.reshape(-1)
        if np.any(k == 0):
            raise KernelError("offset 0 is the self cell")
        return ((k - 0.5) ** (-2 * s) - (k + 0.5) ** (-2 * s)) / (2 * s)
    if k.shape[-1] != 2:
        k = k.reshape(-1, 2)
    a = np.maximum(k[:, 0], k[:, 1])
    b = np.minimum(k[:, 0], k[:, 1])
    if np.any(a == 0):
        raise KernelError("offset 0 is the self cell")
    # int_{a-1/2}^{a+1/2} x^{-1-2s} [J(atan((b+1/2)/x)) - J(atan((b-1/2)/x))] dx
    x = a[:, None] + 0.5 * _GL_NODES[None, :]
    inner = _signed_cos_power(np.arctan((b[:, None] + 0.5) / x), 2 * s) - _signed_cos_power(
        np.arctan((b[:, None] - 0.5) / x), 2 * s
    )
    return 0.5 * (x ** (-1 - 2 * s) * inner) @ _GL_WEIGHTS


def near_weight(dim: int, s: float) -> float:
    """Extra nearest-neighbour weight from the self cell (unit spacing).

    Half the second moment ``int_{C_0} z_1^2 |z|^{-n-2s} dz`` of the central
    cell, so that the central-difference Laplacian stands in for the
    quadratic Taylor term.
    """
    if dim == 1:
        return 0.5 ** (2 - 2 * s) / (2 - 2 * s)
    # moment = 1/2 int_square |z|^{-2s} = 4 int_0^{pi/4} (sec/2)^{2-2s}/(2-2s)
    ang, _ = integrate.quad(lambda t: math.cos(t) ** (2 * s - 2), 0.0, math.pi / 4, epsrel=1e-14)
    moment = 4.0 * 0.5 ** (2 - 2 * s) / (2 - 2 * s) * ang
    return 0.5 * moment


def point_tail(extent, s: float, points) -> np.ndarray:
    """``int_{R^n \\ Q} |x - y|^{-n-2s} dy`` for points ``x`` inside the box ``Q``.

    1D is elementary. In 2D, polar coordinates about ``x`` reduce each box side
    to an incomplete beta function.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    dim = len(extent)
    if pts.shape[-1] != dim:
        pts = pts.reshape(-1, dim)
    if dim == 1:
        (a, b), = extent
        x = pts[:, 0]
        return ((x - a) ** (-2 * s) + (b - x) ** (-2 * s)) / (2 * s)
    (x0, x1), (y0, y1) = extent
    px, py = pts[:, 0], pts[:, 1]
    sides = [
        (x1 - px, y1 - py, py - y0),
        (px - x0, y1 - py, py - y0),
        (y1 - py, x1 - px, px - x0),
        (py - y0, x1 - px, px - x0),
    ]
    total = np.zeros(len(pts))
    for d, l1, l2 in sides:
        span = cos_power_integral(np.arctan(l1 / d), 2 * s) + cos_power_integral(np.arctan(l2 / d), 2 * s)
        total += d ** (-2 * s) / (2 * s) * span
    return total


def complement_integral(dim: int, s: float) -> float:
    """``int_{R^n \\ C_0} |z|^{-n-2s} dz`` for the unit cell ``C_0`` centred at 0."""
    box = ((-0.5, 0.5),) * dim
    return float(point_tail(box, s, np.zeros(dim))[0])


def cell_pair_integral_1d(a, b, c, d, s: float) -> float:
    """Exact ``int_a^b int_c^d |x - y|^{-1-2s} dy dx`` for disjoint intervals ``b <= c``.

    Uses the second antiderivative ``G(t) = t^{1-2s} / (2s(2s-1))`` (``-log t``
    at ``s = 1/2``). Touching intervals give ``inf`` once ``s >= 1/2``.
    """
    _check_s(s)
    if b < a or d < c:
        raise KernelError("intervals must be ordered")
    if c < b:
        if a >= d:
            return cell_pair_integral_1d(c, d, a, b, s)
        raise KernelError("intervals overlap")

    def G(t):
        if t == 0:
            return 0.0 if s < 0.5 else math.inf
        if s == 0.5:
            return -math.log(t)
        return t ** (1 - 2 * s) / (2 * s * (2 * s - 1))

    if c == b and s >= 0.5:
        return math.inf
    return G(d - a) - G(d - b) - G(c - a) + G(c - b)


@lru_cache(maxsize=64)
def _offset_table(dim: int, s: float, span: tuple[int, ...]) -> np.ndarray:
    """Unit-spacing pair weights (incl. near correction) indexed by |offset|."""
    if dim == 1:
        k = np.arange(1, span[0])
        table = np.zeros(span[0])
        table[1:] = unit_cell_weight(1, s, k)
        if span[0] > 1:
            table[1] += near_weight(1, s)
    else:
        m = max(span)
        ii, jj = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
        offs = np.stack([ii.ravel(), jj.ravel()], axis=1)[1:]
        table = np.zeros(m * m)
        table[1:] = unit_cell_weight(2, s, offs)
        table = table.reshape(m, m)
        nw = near_weight(2, s)
        table[1, 0] += nw
        table[0, 1] += nw
        table = table[: span[0], : span[1]]
    table.setflags(write=False)
    return table


def _missing_neighbours(grid: BoxGrid) -> np.ndarray:
    """Per cell, the number of axis neighbours lying outside the box."""
    miss = np.zeros(grid.shape)
    for axis, k in enumerate(grid.shape):
        sl = [slice(None)] * grid.dim
        sl[axis] = 0
        miss[tuple(sl)] += 1
        sl[axis] = k - 1
        miss[tuple(sl)] += 1
    return miss.ravel()


@dataclass(frozen=True, eq=False)
class KernelTable:
    """Dense pair weights ``W`` (zero diagonal) and exterior tails ``T`` on a grid.

    ``uᵀ (diag(W 1 + T) - W) u`` is half the discrete Gagliardo double sum of
    the zero extension of ``u``.
    """

    param: FracParam
    grid: BoxGrid
    W: np.ndarray
    T: np.ndarray

    @property
    def row_total(self) -> np.ndarray:
        return self.W.sum(axis=1) + self.T


def _build_table(grid: BoxGrid, param: FracParam) -> KernelTable:
    s, h, n = param.s, grid.h, grid.dim
    if param.classical:
        raise KernelError("kernel tables exist only for s < 1")
    table = _offset_table(n, s, grid.shape)
    scale = h**n * h ** (-2 * s)
    d = [np.abs(np.arange(k)[:, None] - np.arange(k)[None, :]) for k in grid.shape]
    if n == 1:
        W = scale * table[d[0]]
    else:
        k0, k1 = grid.shape
        W = scale * table[d[0][:, None, :, None], d[1][None, :, None, :]].reshape(k0 * k1, k0 * k1)
    np.fill_diagonal(W, 0.0)
    # axis neighbours beyond the box face carry the near weight with value 0,
    # exactly like grid cells outside a mask; row totals are then translation
    # invariant.
    missing = near_weight(n, s) * _missing_neighbours(grid)
    T = h**n * point_tail(grid.extent, s, grid.centers()) + scale * missing
    W.setflags(write=False)
    T.setflags(write=False)
    return KernelTable(param, grid, W, T)


_TABLES: dict = {}


def kernel_table(grid: BoxGrid, param: FracParam, cache_dir=None) -> KernelTable:
    """Kernel table for ``(grid, s)``, memoised in-process and optionally on disk."""
    key = (grid, param)
    if key in _TABLES:
        return _TABLES[key]
    tab = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"kernel-{cache_key(grid, param)}.bin"
        if path.exists():
            tab = load_table(path)
    if tab is None:
        tab = _build_table(grid, param)
        if cache_dir is not None:
            save_table(tab, path)
    if len(_TABLES) > 32:
        _TABLES.clear()
    _TABLES[key] = tab
    return tab


def pair_weight(grid: BoxGrid, param: FracParam, i: int, j: int) -> float:
    if i == j:
        raise KernelError("diagonal pairs are handled by assembly")
    return float(kernel_table(grid, param).W[i, j])


def exterior_tail(grid: BoxGrid, param: FracParam, i: int) -> float:
    return float(kernel_table(grid, param).T[i])


# binary cache: one JSON header line, then W (row-major) and T as little-endian float64


def cache_key(grid: BoxGrid, param: FracParam) -> str:
    desc = json.dumps(
        {"dim": grid.dim, "extent": grid.extent, "cells": grid.shape, "s": repr(param.s)},
        sort_keys=True,
    )
    return hashlib.sha256(desc.encode()).hexdigest()[:16]


def save_table(tab: KernelTable, path) -> None:
    payload = np.concatenate([tab.W.ravel(), tab.T]).astype("<f8").tobytes()
    header = {
        "format": "fracshape-kernel v1",
        "dim": tab.grid.dim,
        "extent": tab.grid.extent,
        "cells": tab.grid.shape,
        "s": repr(tab.param.s),
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(payload)


def load_table(path) -> KernelTable:
    from .grid import make_grid

    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        payload = fh.read()
    if header.get("format") != "fracshape-kernel v1":
        raise KernelError(f"{path}: unknown kernel cache format")
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise KernelError(f"{path}: content hash mismatch")
    grid = make_grid(header["dim"], header["extent"], header["cells"])
    param = FracParam(float(header["s"]), grid.dim)
    data = np.frombuffer(payload, dtype="<f8").astype(float)
    N = grid.n_cells
    W = data[: N * N].reshape(N, N)
    T = data[N * N:]
    W.setflags(write=False)
    T.setflags(write=False)
    return KernelTable(param, grid, W, T)
