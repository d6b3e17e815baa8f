"""Stiffness matrices for the fractional (and classical) Dirichlet Laplacian.

Convention: ``uᵀ K u = (c(n,s)/2) [u]_s^2`` for the zero extension of ``u``,
so Rayleigh quotients ``uᵀKu / (h^n uᵀu)`` approximate Dirichlet eigenvalues
directly and the torsion load is ``h^n`` per cell. This is the only place
the factor one half enters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import BoxGrid, SetMask
from .kernel import FracParam, _missing_neighbours, kernel_table


class OperatorError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NonlocalOperator:
    param: FracParam
    grid: BoxGrid
    domain: SetMask
    K: np.ndarray

    @property
    def mass(self) -> float:
        return self.grid.cell_volume

    @property
    def dof(self) -> np.ndarray:
        return self.domain.indices

    @property
    def size(self) -> int:
        return self.K.shape[0]

    def extend(self, u_dof) -> np.ndarray:
        """Zero extension of a dof vector to the whole grid."""
        full = np.zeros(self.grid.n_cells)
        full[self.dof] = u_dof
        return full

    def energy(self, u_dof) -> float:
        u = np.asarray(u_dof, dtype=float)
        return float(u @ self.K @ u)

    def rayleigh(self, u_dof) -> float:
        u = np.asarray(u_dof, dtype=float)
        return self.energy(u) / (self.mass * float(u @ u))


def _classical_stiffness(grid: BoxGrid) -> np.ndarray:
    # 3/5-point stencil; the box face is a Dirichlet boundary at distance h/2
    # (ghost value -u_i), interior mask boundaries see the zero neighbour at h.
    N = grid.n_cells
    A = np.zeros((N, N))
    idx = np.arange(N).reshape(grid.shape)
    for axis in range(grid.dim):
        lo = np.take(idx, np.arange(grid.shape[axis] - 1), axis=axis).ravel()
        hi = np.take(idx, np.arange(1, grid.shape[axis]), axis=axis).ravel()
        A[lo, hi] = -1.0
        A[hi, lo] = -1.0
    A[np.diag_indices(N)] = 2 * grid.dim + _missing_neighbours(grid)
    return grid.h ** (grid.dim - 2) * A


_FULL: dict = {}


def full_stiffness(grid: BoxGrid, param: FracParam) -> np.ndarray:
    """Stiffness matrix on every cell of the grid (read-only, memoised)."""
    if param.dim != grid.dim:
        raise OperatorError("parameter and grid dimensions differ")
    key = (grid, param)
    K = _FULL.get(key)
    if K is None:
        if param.classical:
            K = _classical_stiffness(grid)
        else:
            tab = kernel_table(grid, param)
            K = -param.cns * tab.W
            K[np.diag_indices_from(K)] = param.cns * tab.row_total
        K.setflags(write=False)
        if len(_FULL) > 32:
            _FULL.clear()
        _FULL[key] = K
    return K


def assemble(grid: BoxGrid, param: FracParam, domain_mask: SetMask) -> NonlocalOperator:
    """Operator on the cells of ``domain_mask``.

    The result is the principal submatrix of :func:`full_stiffness`, so cells
    of the grid outside the mask act exactly as zero exterior values.
    """
    if domain_mask.grid != grid:
        raise OperatorError("mask lives on a different grid")
    idx = domain_mask.indices
    if idx.size == 0:
        raise OperatorError("empty domain")
    K = full_stiffness(grid, param)[np.ix_(idx, idx)]
    K.setflags(write=False)
    return NonlocalOperator(param, grid, domain_mask, K)


def full_operator(grid: BoxGrid, param: FracParam) -> NonlocalOperator:
    return assemble(grid, param, SetMask.full(grid))


def gagliardo_seminorm(u_on_grid, grid: BoxGrid, param: FracParam) -> float:
    """Discrete ``[u]_s^2`` of the zero extension of ``u`` (no ``c(n,s)`` factor).

    Evaluated as the explicit double sum over cell pairs plus twice the
    exterior tails, independently of the assembled matrix.
    """
    if param.classical:
        raise OperatorError("the Gagliardo seminorm needs s < 1")
    u = np.asarray(u_on_grid, dtype=float).ravel()
    tab = kernel_table(grid, param)
    diff = u[:, None] - u[None, :]
    return float(np.sum(diff * diff * tab.W) + 2.0 * np.dot(u * u, tab.T))


def uniform_bound_check(u_on_grid, grid: BoxGrid, param: FracParam) -> float:
    """``(1-s) [u]_s^2``; stays bounded in ``s`` for members of ``K_s``."""
    return (1.0 - param.s) * gagliardo_seminorm(u_on_grid, grid, param)


def dump_triplets(op: NonlocalOperator, path) -> None:
    """Write nonzero entries of ``K`` as ``i j value`` lines (dof numbering)."""
    rows, cols = np.nonzero(op.K)
    with open(path, "w") as fh:
        fh.write(f"# fracshape operator n={op.size} s={op.param.s!r}\n")
        for i, j in zip(rows, cols):
            fh.write(f"{i} {j} {float(op.K[i, j])!r}\n")
