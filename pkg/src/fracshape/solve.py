"""State equations on a pixel set: torsion, Dirichlet eigenpairs, capacity."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
from scipy.sparse.linalg import eigsh

from .grid import BoxGrid, SetMask
from .kernel import FracParam
from .operator import NonlocalOperator, OperatorError, assemble, full_stiffness

DENSE_EIG_LIMIT = 2000
RESIDUAL_TOL = 1e-10
DEGENERACY_TOL = 1e-8
TIE_SEED = 20240501


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class TorsionSolution:
    domain: SetMask
    s: float
    u: np.ndarray  # on the whole grid, zero off the domain
    residual_norm: float

    @property
    def max_value(self) -> float:
        return float(self.u.max())


def solve_torsion(op: NonlocalOperator) -> TorsionSolution:
    """Solve ``K u = h^n 1`` on the domain dofs (Cholesky + one refinement step)."""
    if op.size == 0:
        raise SolverError("empty domain")
    b = np.full(op.size, op.mass)
    try:
        factor = la.cho_factor(op.K, lower=True, check_finite=False)
    except la.LinAlgError as exc:
        raise SolverError(f"stiffness matrix not positive definite: {exc}") from exc
    u = la.cho_solve(factor, b, check_finite=False)
    r = b - op.K @ u
    u += la.cho_solve(factor, r, check_finite=False)
    res = float(np.linalg.norm(b - op.K @ u) / np.linalg.norm(b))
    if res > RESIDUAL_TOL:
        raise SolverError(f"torsion solve did not converge: relative residual {res:.3e}")
    if u.min() < -1e-12:
        raise SolverError(f"maximum principle violated: min u = {u.min():.3e}")
    u = np.maximum(u, 0.0)
    return TorsionSolution(op.domain, op.param.s, op.extend(u), res)


def torsion(grid: BoxGrid, param: FracParam, mask: SetMask) -> np.ndarray:
    """Torsion function on the whole grid; identically zero for an empty mask."""
    if mask.count == 0:
        return np.zeros(grid.n_cells)
    return solve_torsion(assemble(grid, param, mask)).u


@dataclass(frozen=True, eq=False)
class SpectralResult:
    domain: SetMask
    s: float
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # (n_dof, count), h^n-orthonormal
    degenerate: list = field(default_factory=list)  # index pairs (k, k+1), 0-based

    def full_vector(self, k: int) -> np.ndarray:
        full = np.zeros(self.domain.grid.n_cells)
        full[self.domain.indices] = self.eigenvectors[:, k]
        return full


def _fix_degenerate(vals, vecs, rng_seed=TIE_SEED):
    """Replace each cluster's basis by a seed-determined orthonormal basis of the same span."""
    pairs = []
    k = 0
    n = len(vals)
    while k < n:
        j = k
        while j + 1 < n and vals[j + 1] - vals[j] <= DEGENERACY_TOL * max(abs(vals[j]), 1.0):
            pairs.append((j, j + 1))
            j += 1
        if j > k:
            V = vecs[:, k : j + 1]
            G = np.random.default_rng(rng_seed).standard_normal((V.shape[0], V.shape[1]))
            Q, _ = np.linalg.qr(V @ (V.T @ G))
            vecs[:, k : j + 1] = Q
        k = j + 1
    return vecs, pairs


def solve_eigs(op: NonlocalOperator, count: int) -> SpectralResult:
    """Smallest ``count`` eigenpairs of ``K / h^n``, ascending."""
    if count < 1 or count > op.size:
        raise SolverError(f"requested {count} eigenpairs but the domain has {op.size} cells")
    A = op.K / op.mass
    if op.size <= DENSE_EIG_LIMIT or count > op.size // 2:
        vals, vecs = la.eigh(A, subset_by_index=[0, count - 1], check_finite=False)
    else:
        try:
            vals, vecs = eigsh(A, k=count, sigma=0.0, which="LM", tol=1e-12, v0=np.ones(op.size))
        except Exception as exc:  # ArpackNoConvergence and friends
            raise SolverError(f"eigensolver failed: {exc}") from exc
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
    vecs, pairs = _fix_degenerate(vals, np.array(vecs))
    vecs /= np.sqrt(op.mass)
    for k in range(count):
        v = vecs[:, k]
        lead = np.flatnonzero(np.abs(v) > 1e-12 * np.abs(v).max())[0]
        if v[lead] < 0:
            vecs[:, k] = -v
    return SpectralResult(op.domain, op.param.s, vals, vecs, pairs)


@dataclass(frozen=True, eq=False)
class CapacityValue:
    condenser: SetMask
    s: float
    value: float
    potential: np.ndarray


def capacity(grid: BoxGrid, param: FracParam, condenser: SetMask) -> CapacityValue:
    """Discrete Gagliardo capacity of ``condenser`` relative to the box.

    Minimises ``[u]_s^2`` (no ``c(n,s)`` factor) over grid functions equal to 1
    on the condenser and 0 outside the box. The minimiser is harmonic for the
    discrete operator on the free cells; by the M-matrix property it already
    lies in ``[0, 1]``.
    """
    if param.classical:
        raise SolverError("capacity is implemented for s < 1")
    L = full_stiffness(grid, param) / param.cns  # uᵀ L u = [u]^2 / 2
    on = condenser.flat
    u = np.zeros(grid.n_cells)
    if not on.any():
        return CapacityValue(condenser, param.s, 0.0, u)
    u[on] = 1.0
    free = ~on
    if free.any():
        rhs = -L[np.ix_(free, on)].sum(axis=1)
        u[free] = la.solve(L[np.ix_(free, free)], rhs, assume_a="pos")
    value = 2.0 * float(u @ L @ u)
    return CapacityValue(condenser, param.s, value, u)


@dataclass(frozen=True)
class KsReport:
    member: bool
    min_value: float
    worst_cell: int
    worst_excess: float  # max_i (K u)_i / h^n - 1


def ks_membership(u_on_grid, full_op: NonlocalOperator, tol: float = 1e-9) -> KsReport:
    """Check ``u >= 0`` and the discrete bound ``(-Δ)^s u <= 1`` on every cell."""
    if full_op.domain.count != full_op.grid.n_cells:
        raise OperatorError("ks_membership needs the operator on the full grid")
    u = np.asarray(u_on_grid, dtype=float).ravel()
    excess = (full_op.K @ u) / full_op.mass - 1.0
    worst = int(np.argmax(excess))
    ok = bool(u.min() >= -1e-12 and excess[worst] <= tol)
    return KsReport(ok, float(u.min()), worst, float(excess[worst]))


@dataclass(frozen=True)
class MaximalityReport:
    holds: bool
    checked: list
    excluded: list
    max_excess: float  # max over checked samples of max(w - u_A)


def torsion_maximality_check(grid, param, mask: SetMask, sample_ws, tol: float = 1e-10) -> MaximalityReport:
    """Verify ``w <= u_A`` for every admissible sample ``w``.

    A sample is admissible when ``w <= 0`` off ``A`` and the discrete
    ``(-Δ)^s w <= 1`` holds on the box; others are reported as excluded.
    """
    from .operator import full_operator

    full = full_operator(grid, param)
    uA = torsion(grid, param, mask)
    off = ~mask.flat
    checked, excluded, worst = [], [], -np.inf
    for k, w in enumerate(sample_ws):
        w = np.asarray(w, dtype=float).ravel()
        bound = (full.K @ w) / full.mass - 1.0
        if np.any(w[off] > tol) or bound.max() > 1e-9:
            excluded.append(k)
            continue
        checked.append(k)
        worst = max(worst, float(np.max(w - uA)))
    holds = not checked or worst <= tol
    return MaximalityReport(bool(holds), checked, excluded, float(worst) if checked else 0.0)


def write_solution_csv(sol: TorsionSolution, path) -> None:
    grid = sol.domain.grid
    coords = grid.centers()
    names = ["cell_index", "x"] + (["y"] if grid.dim == 2 else []) + ["u_value"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(grid.n_cells):
            w.writerow([i, *(repr(float(c)) for c in coords[i]), repr(float(sol.u[i]))])


def write_spectrum_csv(res: SpectralResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eigen_index", "lambda"])
        for k, lam in enumerate(res.eigenvalues, start=1):
            w.writerow([k, repr(float(lam))])
