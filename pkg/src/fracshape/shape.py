"""Spectral costs and measure-constrained minimisation over pixel sets.

The budget ``|A| <= c`` is enforced as ``#A = floor(c / h^n)``: every built-in
cost is nonincreasing under set inclusion, so a saturated mask is always at
least as good as any of its subsets.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .grid import BoxGrid, SetMask
from .kernel import FracParam
from .operator import full_stiffness
from .solve import torsion

COMBINERS = ("single", "sum", "max", "constant")
BATCH_LIMIT = 48  # largest mask size evaluated with batched eigvalsh
TIE_RTOL = 1e-12


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class CostSpec:
    """``Phi(lambda_{k_1}, ..., lambda_{k_N})`` with a measure budget.

    ``combiner`` is ``single`` (one index), ``sum`` (positive weights),
    ``max`` or ``constant`` (``weights[0]`` regardless of the spectrum).
    """

    indices: tuple[int, ...]
    combiner: str = "single"
    budget: float = 1.0
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        idx = tuple(int(k) for k in self.indices)
        object.__setattr__(self, "indices", idx)
        if not idx or idx[0] < 1 or any(b <= a for a, b in zip(idx, idx[1:])):
            raise ShapeError(f"eigenvalue indices must be increasing and >= 1: {idx}")
        if self.combiner not in COMBINERS:
            raise ShapeError(f"unknown combiner {self.combiner!r}")
        if self.combiner == "single" and len(idx) != 1:
            raise ShapeError("'single' takes exactly one index")
        w = self.weights
        if w is None:
            w = (1.0,) * len(idx)
        w = tuple(float(v) for v in w)
        if len(w) != len(idx) and self.combiner != "constant":
            raise ShapeError("one weight per index")
        if self.combiner == "sum" and any(v <= 0 for v in w):
            raise ShapeError("weights must be positive")
        object.__setattr__(self, "weights", w)
        if not self.budget > 0:
            raise ShapeError("budget must be positive")

    @property
    def kmax(self) -> int:
        return self.indices[-1]

    def combine(self, lams: np.ndarray) -> np.ndarray:
        """Apply ``Phi`` to ascending spectra ``lams[..., :kmax]``."""
        lams = np.asarray(lams)
        sel = lams[..., [k - 1 for k in self.indices]]
        if self.combiner == "single":
            return sel[..., 0]
        if self.combiner == "sum":
            return sel @ np.asarray(self.weights)
        if self.combiner == "max":
            return sel.max(axis=-1)
        return np.full(sel.shape[:-1], self.weights[0])

    def cells(self, grid: BoxGrid) -> int:
        if self.budget > grid.volume * (1 + 1e-12):
            raise ShapeError(f"budget {self.budget} exceeds the box measure {grid.volume}")
        m = int(math.floor(self.budget / grid.cell_volume + 1e-9))
        if m < self.kmax:
            raise ShapeError(f"budget admits {m} cells but the cost needs lambda_{self.kmax}")
        return m


class CostEvaluator:
    """Evaluates ``F_s`` on masks of one grid, reusing the full stiffness matrix."""

    def __init__(self, cost: CostSpec, grid: BoxGrid, param: FracParam):
        self.cost, self.grid, self.param = cost, grid, param
        self.K = full_stiffness(grid, param)
        self.mass = grid.cell_volume
        self.evaluations = 0

    def spectrum(self, idx) -> np.ndarray:
        idx = np.asarray(idx)
        if idx.size < self.cost.kmax:
            raise ShapeError(f"mask has {idx.size} cells, cost needs lambda_{self.cost.kmax}")
        sub = self.K[np.ix_(idx, idx)] / self.mass
        return la.eigh(sub, eigvals_only=True, subset_by_index=[0, self.cost.kmax - 1])

    def __call__(self, mask_or_idx) -> float:
        idx = mask_or_idx.indices if isinstance(mask_or_idx, SetMask) else np.asarray(mask_or_idx)
        self.evaluations += 1
        return float(self.cost.combine(self.spectrum(idx)))

    def batch(self, idx_rows) -> np.ndarray:
        """Costs for a stack of equal-size index sets, shape ``(B, m)``."""
        idx_rows = np.asarray(idx_rows)
        B, m = idx_rows.shape
        self.evaluations += B
        if m < self.cost.kmax:
            raise ShapeError(f"mask has {m} cells, cost needs lambda_{self.cost.kmax}")
        if m > BATCH_LIMIT:
            return np.array([float(self.cost.combine(self.spectrum(r))) for r in idx_rows])
        sub = self.K[idx_rows[:, :, None], idx_rows[:, None, :]] / self.mass
        return self.cost.combine(np.linalg.eigvalsh(sub)[:, : self.cost.kmax])


def evaluate_cost(cost: CostSpec, grid: BoxGrid, param: FracParam, mask: SetMask) -> float:
    if mask.count == 0:
        raise ShapeError("empty mask")
    return CostEvaluator(cost, grid, param)(mask)


def gamma_s_distance(grid: BoxGrid, param: FracParam, A: SetMask, B: SetMask) -> float:
    """``||u_A - u_B||_{L^2(Q)}`` between torsion functions."""
    d = torsion(grid, param, A) - torsion(grid, param, B)
    return float(math.sqrt(grid.cell_volume * float(d @ d)))


@dataclass
class OptResult:
    best_mask: SetMask
    best_value: float
    history: list = field(default_factory=list)  # (iteration, value)
    evaluations: int = 0
    method: str = ""
    seed: int | None = None
    accepted: int = 0

    def summary(self) -> dict:
        return {
            "method": self.method,
            "value": self.best_value,
            "measure": self.best_mask.measure(),
            "cells": self.best_mask.count,
            "evaluations": self.evaluations,
            "accepted_moves": self.accepted,
            "seed": self.seed,
        }

    def export(self, directory, stem="opt") -> None:
        from pathlib import Path

        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        self.best_mask.save(out / f"{stem}_mask.txt")
        with open(out / f"{stem}_history.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "value"])
            for it, v in self.history:
                w.writerow([it, repr(float(v))])


def _argmin_first(values: np.ndarray) -> int:
    """Lowest index among values within ``TIE_RTOL`` of the minimum."""
    lo = values.min()
    return int(np.flatnonzero(values <= lo + TIE_RTOL * abs(lo))[0])


def brute_force_min(cost: CostSpec, grid: BoxGrid, param: FracParam, guard: float = 1e6,
                    cells: int | None = None, chunk: int = 20000) -> OptResult:
    """Global minimum over all masks with exactly the saturated cell count.

    Candidates are visited in lexicographic order of their sorted cell
    indices; near-ties (relative ``1e-12``) go to the first one.
    """
    N = grid.n_cells
    m = cost.cells(grid) if cells is None else cells
    total = math.comb(N, m)
    if total > guard:
        raise ShapeError(f"enumeration guard: C({N},{m}) = {total} > {guard:g}")
    ev = CostEvaluator(cost, grid, param)
    best_val, best_idx = math.inf, None
    combos = itertools.combinations(range(N), m)
    while True:
        block = np.fromiter(itertools.chain.from_iterable(itertools.islice(combos, chunk)), dtype=np.intp)
        if block.size == 0:
            break
        block = block.reshape(-1, m)
        vals = ev.batch(block)
        k = _argmin_first(vals)
        if best_idx is None or vals[k] < best_val - TIE_RTOL * abs(best_val):
            best_val, best_idx = float(vals[k]), block[k].copy()
    mask = SetMask.from_indices(grid, best_idx)
    value = ev(mask)
    return OptResult(mask, value, [(0, value)], ev.evaluations, "brute")


def random_mask(grid: BoxGrid, cells: int, seed: int) -> SetMask:
    rng = np.random.default_rng(seed)
    return SetMask.from_indices(grid, np.sort(rng.choice(grid.n_cells, size=cells, replace=False)))


def _adjacent(grid: BoxGrid, member: np.ndarray) -> np.ndarray:
    """Cells with at least one axis neighbour of the opposite membership."""
    m = member.reshape(grid.shape)
    out = np.zeros_like(m)
    for axis in range(grid.dim):
        a = np.swapaxes(m, 0, axis)
        o = np.swapaxes(out, 0, axis)
        o[1:] |= a[1:] != a[:-1]
        o[:-1] |= a[1:] != a[:-1]
    return out.ravel()


def _swaps(grid, member, neighbourhood):
    inside = np.flatnonzero(member)
    outside = np.flatnonzero(~member)
    if neighbourhood == "boundary":
        adj = _adjacent(grid, member)
        inside = inside[adj[inside]]
        outside = outside[adj[outside]]
    return [(int(r), int(a)) for r in inside for a in outside]


def _swapped(member_idx: np.ndarray, remove: int, add: int) -> np.ndarray:
    rest = member_idx[member_idx != remove]
    return np.sort(np.append(rest, add))


def _check_init(cost, grid, init_mask):
    m = cost.cells(grid)
    if init_mask.count != m:
        raise ShapeError(f"initial mask has {init_mask.count} cells, budget saturates at {m}")


def exchange_search(cost: CostSpec, grid: BoxGrid, param: FracParam, init_mask: SetMask | None = None,
                    max_iters: int = 1000, seed: int = 0, neighbourhood: str | None = None) -> OptResult:
    """Steepest-descent single-cell swaps until no swap strictly improves.

    With ``init_mask=None`` the start is a uniformly random saturated mask
    drawn from ``seed``. Ties between equally good swaps go to the lowest
    ``(remove, add)`` pair.
    """
    if init_mask is None:
        init_mask = random_mask(grid, cost.cells(grid), seed)
    _check_init(cost, grid, init_mask)
    m = init_mask.count
    if neighbourhood is None:
        neighbourhood = "all" if m * (grid.n_cells - m) <= 5000 else "boundary"
    ev = CostEvaluator(cost, grid, param)
    member = init_mask.flat.copy()
    idx = np.flatnonzero(member)
    value = ev(idx)
    history, accepted = [(0, value)], 0
    for it in range(1, max_iters + 1):
        moves = _swaps(grid, member, neighbourhood)
        if not moves:
            break
        cand = np.array([_swapped(idx, r, a) for r, a in moves])
        vals = ev.batch(cand)
        k = _argmin_first(vals)
        if not vals[k] < value - TIE_RTOL * abs(value):
            break
        r, a = moves[k]
        member[r], member[a] = False, True
        idx = cand[k]
        value = float(vals[k])
        accepted += 1
        history.append((it, value))
    mask = SetMask(grid, member)
    return OptResult(mask, ev(mask), history, ev.evaluations, "exchange", seed, accepted)


@dataclass(frozen=True)
class AnnealSchedule:
    t0_fraction: float = 0.1
    ratio: float = 0.95
    sweeps: int = 50
    moves_per_sweep: int | None = None  # defaults to the number of grid cells
    polish: bool = True  # finish with exchange_search from the best-ever mask


def anneal_search(cost: CostSpec, grid: BoxGrid, param: FracParam, init_mask: SetMask | None = None,
                  schedule: AnnealSchedule = AnnealSchedule(), seed: int = 0) -> OptResult:
    """Metropolis single-cell swaps under a geometric temperature schedule."""
    rng = np.random.default_rng(seed)
    if init_mask is None:
        init_mask = random_mask(grid, cost.cells(grid), seed)
    _check_init(cost, grid, init_mask)
    ev = CostEvaluator(cost, grid, param)
    member = init_mask.flat.copy()
    idx = np.flatnonzero(member)
    value = ev(idx)
    best_val, best_member = value, member.copy()
    temp = schedule.t0_fraction * abs(value)
    moves = schedule.moves_per_sweep or grid.n_cells
    history, accepted, it = [(0, value)], 0, 0
    for _ in range(schedule.sweeps):
        for _ in range(moves):
            it += 1
            inside = np.flatnonzero(member)
            outside = np.flatnonzero(~member)
            if outside.size == 0:
                break
            r = int(inside[rng.integers(inside.size)])
            a = int(outside[rng.integers(outside.size)])
            cand = _swapped(idx, r, a)
            v = ev(cand)
            delta = v - value
            u = rng.random()
            if delta < 0 or (temp > 0 and u < math.exp(-delta / temp)):
                member[r], member[a] = False, True
                idx, value = cand, v
                accepted += 1
                history.append((it, value))
                if value < best_val - TIE_RTOL * abs(best_val):
                    best_val, best_member = value, member.copy()
        temp *= schedule.ratio
    best = SetMask(grid, best_member)
    evaluations = ev.evaluations
    if schedule.polish:
        pol = exchange_search(cost, grid, param, best, seed=seed)
        evaluations += pol.evaluations
        for k, v in pol.history[1:]:
            history.append((it + k, v))
        accepted += pol.accepted
        best = pol.best_mask
    return OptResult(best, ev(best), history, evaluations + 1, "anneal", seed, accepted)


@dataclass
class SweepRow:
    s: float
    min_value: float
    argmin: SetMask
    torsion: np.ndarray


def sweep_s_minima(cost: CostSpec, grid: BoxGrid, s_list, guard: float = 1e6) -> list[SweepRow]:
    """Exact discrete minima for each ``s`` (ascending, ending at ``s = 1``)."""
    s_list = [float(s) for s in s_list]
    if any(b <= a for a, b in zip(s_list, s_list[1:])):
        raise ShapeError("s values must be strictly increasing")
    rows = []
    for s in s_list:
        param = FracParam(s, grid.dim)
        res = brute_force_min(cost, grid, param, guard=guard)
        rows.append(SweepRow(s, res.best_value, res.best_mask, torsion(grid, param, res.best_mask)))
    return rows


def cross_gamma_distance(grid: BoxGrid, u: np.ndarray, v: np.ndarray) -> float:
    """``L^2(Q)`` distance between two grid functions (torsions at different ``s``)."""
    d = np.asarray(u) - np.asarray(v)
    return float(math.sqrt(grid.cell_volume * float(d @ d)))
