"""One test per acceptance criterion, at the stated tolerance.

Each test records a PASS/FAIL line (printed in the terminal summary) before
asserting. Timings include kernel-table construction: caches are cleared first.
"""

import itertools
import math
import time

import numpy as np
import pytest

from fracshape import cli, kernel, operator
from fracshape.experiments import BUMP_DIRICHLET_ENERGY, DEFAULTS, bump, run_experiment
from fracshape.grid import SetMask, make_grid
from fracshape.kernel import FracParam, cns, cns_limit, cns_quadrature
from fracshape.operator import assemble, full_operator, full_stiffness, gagliardo_seminorm
from fracshape.shape import (
    CostEvaluator,
    CostSpec,
    brute_force_min,
    cross_gamma_distance,
    exchange_search,
    sweep_s_minima,
)
from fracshape.solve import ks_membership, solve_eigs, solve_torsion, torsion

LAMBDA1_HALF_REF = 1.1567851991238005  # tests/oracles/compute_oracles.py (Aitken extrapolation)


def cold():
    kernel._TABLES.clear()
    kernel._offset_table.cache_clear()
    operator._FULL.clear()


def record(book, num, checks):
    """``checks`` maps a label to (ok, value text); stores one summary line."""
    ok = all(c[0] for c in checks.values())
    detail = "; ".join(f"{k}={v}{'' if c else ' (FAIL)'}" for k, (c, v) in checks.items())
    book[num] = (ok, detail)
    print(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


def rand_mask(grid, rng, p=0.5):
    while True:
        m = rng.random(grid.n_cells) < p
        if m.any():
            return SetMask(grid, m)


def test_criterion_01_normalization_constant(acceptance):
    cold()
    t = time.perf_counter()
    q = cns_quadrature(1, 0.5)
    rel_q = abs(q - 1 / math.pi) / (1 / math.pi)
    rel = {n: abs(cns(n, 0.99) / 0.01 - cns_limit(n)) / cns_limit(n) for n in (1, 2)}
    dt = time.perf_counter() - t
    ok = record(acceptance, 1, {
        "quadrature_vs_1/pi": (rel_q <= 1e-6, f"{rel_q:.1e}"),
        "n1_ratio_err@0.99": (rel[1] <= 0.01, f"{rel[1]:.4f}"),
        "n2_ratio_err@0.99": (rel[2] <= 0.01, f"{rel[2]:.4f}"),
        "runtime": (dt < 1.0, f"{dt:.2f}s"),
    })
    assert ok


def test_criterion_02_classical_oracles(acceptance):
    cold()
    t = time.perf_counter()
    g = make_grid(1, (0, 1), 512)
    x = g.centers()[:, 0]
    u = solve_torsion(full_operator(g, FracParam(1.0, 1))).u
    err = np.abs(u - x * (1 - x) / 2).max()
    g2 = make_grid(1, (0, 1), 256)
    lam = solve_eigs(full_operator(g2, FracParam(1.0, 1)), 1).eigenvalues[0]
    rel = abs(lam - math.pi**2) / math.pi**2
    dt = time.perf_counter() - t
    assert record(acceptance, 2, {
        "torsion_Linf": (err <= 1e-3, f"{err:.1e}"),
        "lambda1_rel": (rel <= 5e-3, f"{rel:.1e}"),
        "runtime": (dt < 5, f"{dt:.2f}s"),
    })


def test_criterion_03_fractional_oracles(acceptance):
    cold()
    t = time.perf_counter()
    g = make_grid(1, (-1, 1), 512)
    p = FracParam(0.5, 1)
    op = full_operator(g, p)
    x = g.centers()[:, 0]
    err = np.abs(solve_torsion(op).u - np.sqrt(1 - x * x)).max()
    lam = solve_eigs(op, 1).eigenvalues[0]
    rel = abs(lam - LAMBDA1_HALF_REF) / LAMBDA1_HALF_REF
    dt = time.perf_counter() - t
    assert record(acceptance, 3, {
        "torsion_Linf": (err <= 5e-2, f"{err:.1e}"),
        "lambda1": (rel <= 2e-2, f"{lam:.5f} (rel {rel:.1e})"),
        "runtime": (dt < 30, f"{dt:.2f}s"),
    })


def test_criterion_04_structural_invariants(acceptance):
    rng = np.random.default_rng(2024)
    g = make_grid(2, (0, 1), 7)
    s_vals = (0.25, 0.5, 0.75, 1.0)
    sym = all(np.array_equal(full_stiffness(g, FracParam(s, 2)), full_stiffness(g, FracParam(s, 2)).T)
              for s in s_vals)
    sign_bad = 0
    for k in range(100):
        K = assemble(g, FracParam(s_vals[k % 4], 2), rand_mask(g, rng)).K
        off = K - np.diag(np.diag(K))
        sign_bad += int(np.any(off > 0) or np.any(np.diag(K) <= 0)
                        or np.any(np.diag(K) < np.abs(off).sum(axis=1)))
    eig_bad = cost_bad = 0
    costs = [CostSpec((1,)), CostSpec((1, 2), "sum"), CostSpec((1, 3), "max")]
    for k in range(100):
        p = FracParam(s_vals[k % 4], 2)
        B = rand_mask(g, rng, 0.7)
        A = SetMask(g, B.flat & (rng.random(g.n_cells) < 0.7))
        if A.count < 3:
            A = SetMask.from_indices(g, B.indices[:3])
        la_ = solve_eigs(assemble(g, p, A), 3).eigenvalues
        lb = solve_eigs(assemble(g, p, B), 3).eigenvalues
        eig_bad += int(np.sum(la_ < lb))
        for c in costs:
            cost_bad += int(CostEvaluator(c, g, p)(A) < CostEvaluator(c, g, p)(B))
    scale_err = 0.0
    for s in (0.3, 0.5, 0.7, 0.9, 1.0):
        a = solve_eigs(full_operator(make_grid(1, (0, 1), 64), FracParam(s, 1)), 4).eigenvalues
        b = solve_eigs(full_operator(make_grid(1, (0, 2), 64), FracParam(s, 1)), 4).eigenvalues
        scale_err = max(scale_err, float(np.max(np.abs(b / (2 ** (-2 * s) * a) - 1))))
    assert record(acceptance, 4, {
        "symmetry": (sym, "exact" if sym else "broken"),
        "m_matrix_violations": (sign_bad == 0, str(sign_bad)),
        "eigen_monotonicity_violations": (eig_bad == 0, str(eig_bad)),
        "cost_monotonicity_violations": (cost_bad == 0, str(cost_bad)),
        "scaling_rel_err": (scale_err <= 1e-8, f"{scale_err:.1e}"),
    })


def test_criterion_05_maximum_principle_and_ks(acceptance):
    rng = np.random.default_rng(55)
    g = make_grid(2, (0, 1), 7)
    worst_min, ks_bad, max_bad = 0.0, 0, 0
    for s in (0.3, 0.5, 0.7, 0.9):
        p = FracParam(s, 2)
        full = full_operator(g, p)
        us = []
        for _ in range(100):
            op = assemble(g, p, rand_mask(g, rng))
            u_raw = np.linalg.solve(op.K, np.full(op.size, op.mass))  # pre-clamp values
            worst_min = min(worst_min, float(u_raw.min()))
            u = op.extend(np.maximum(u_raw, 0.0))
            ks_bad += int(not ks_membership(u, full).member)
            us.append(u)
        for i, j in zip(range(0, 100, 2), range(1, 100, 2)):
            max_bad += int(not ks_membership(np.maximum(us[i], us[j]), full).member)
    assert record(acceptance, 5, {
        "min_torsion_preclamp": (worst_min >= -1e-12, f"{worst_min:.1e}"),
        "ks_membership_failures": (ks_bad == 0, str(ks_bad)),
        "max_stability_violations": (max_bad == 0, str(max_bad)),
    })


def test_criterion_06_seminorm_limit(acceptance):
    cold()
    t = time.perf_counter()
    cells = DEFAULTS["seminorm-limit"]["cells"]
    g = make_grid(1, (0, 1), cells)
    p = FracParam(0.999, 1)
    ratio = p.cns / 2 * gagliardo_seminorm(bump(g.centers()[:, 0]), g, p) / BUMP_DIRICHLET_ENERGY
    dt = time.perf_counter() - t
    assert record(acceptance, 6, {
        f"ratio@{cells}cells": (abs(ratio - 1) <= 0.05, f"{ratio:.4f}"),
        "runtime": (dt < 10, f"{dt:.2f}s"),
    })


def test_criterion_07_optimizer_equivalence(acceptance):
    cold()
    t = time.perf_counter()
    g = make_grid(2, (0, 1), 5)
    p = FracParam(0.5, 2)
    cost = CostSpec((1,), budget=6 / 25)
    opt = brute_force_min(cost, g, p)
    hits, budget_ok = 0, opt.best_mask.count == 6
    for seed in range(20):
        res = exchange_search(cost, g, p, seed=seed)
        hits += int(res.best_value <= opt.best_value * (1 + 1e-12))
        budget_ok &= res.best_mask.count == 6 and res.best_mask.measure() <= cost.budget + 1e-12
    dt = time.perf_counter() - t
    assert record(acceptance, 7, {
        "exchange_hits": (hits >= 18, f"{hits}/20"),
        "budget_exact": (budget_ok, "yes" if budget_ok else "no"),
        "runtime": (dt < 300, f"{dt:.1f}s"),
    })


def test_criterion_08_s_sweep(acceptance):
    cold()
    t = time.perf_counter()
    g = make_grid(1, (0, 1), 16)
    cost = CostSpec((1,), budget=0.5)
    rows = sweep_s_minima(cost, g, [0.6, 0.8, 0.9, 0.99, 1.0])
    ref = rows[-1].min_value
    gaps = [abs(r.min_value - ref) / ref for r in rows[:-1]]
    dists = [cross_gamma_distance(g, a.torsion, b.torsion) for a, b in zip(rows, rows[1:])]
    dt = time.perf_counter() - t
    assert record(acceptance, 8, {
        "gaps": (bool(np.all(np.diff(gaps) < 0)), "[" + ", ".join(f"{v:.4f}" for v in gaps) + "]"),
        "gap@0.99": (gaps[3] <= 0.05, f"{gaps[3]:.4f}"),
        "gamma_dists": (bool(np.all(np.diff(dists) < 0)), "[" + ", ".join(f"{v:.3e}" for v in dists) + "]"),
        "runtime": (dt < 600, f"{dt:.1f}s"),
    })


def test_criterion_09_lambda2_splitting(acceptance):
    cold()
    t = time.perf_counter()
    n = 100
    g = make_grid(1, (0, 10), n)
    p = FracParam(0.5, 1)
    cost = CostSpec((2,), budget=2.0)
    m = cost.cells(g)
    ev = CostEvaluator(cost, g, p)
    single = ev.batch(np.array([np.arange(a, a + m) for a in range(n - m + 1)])).min()
    pairs = []
    for l1 in range(1, m):
        for a in range(n):
            for b in range(a + l1 + 1, n - (m - l1) + 1):
                pairs.append(np.r_[np.arange(a, a + l1), np.arange(b, b + m - l1)])
    best_pair = ev.batch(np.array(pairs)).min()
    half = m // 2
    sep = [ev(np.r_[np.arange(half), np.arange(half + gap, 2 * half + gap)]) for gap in range(1, n - m + 1)]
    dt = time.perf_counter() - t
    assert record(acceptance, 9, {
        "best_pair_vs_single": (best_pair < single, f"{best_pair:.5f} < {single:.5f}"),
        "lambda2_decreasing_in_separation": (bool(np.all(np.diff(sep) < 0)), f"{len(sep)} separations"),
        "runtime": (dt < 600, f"{dt:.1f}s"),
    })


def test_criterion_10_uniform_bound(acceptance):
    rep = run_experiment("uniform-bound")
    growth = rep["checks"]["no_blow_up"]["detail"]
    assert record(acceptance, 10, {
        "torsions_in_Ks": (rep["checks"]["torsions_in_Ks"]["pass"], "all"),
        "no_blow_up": (rep["checks"]["no_blow_up"]["pass"], growth),
        "bound_constant": (True, f"{rep['data']['bound_constant']:.3f}"),
    })


def test_criterion_11_determinism(acceptance, tmp_path):
    diffs = []
    for name in DEFAULTS:
        outs = []
        for k in (1, 2):
            cold()
            d = tmp_path / f"{name}-{k}"
            cli.main(["experiment", name, "--out", str(d), "--serial"])
            outs.append((d / f"{name}.json").read_bytes())
        if outs[0] != outs[1]:
            diffs.append(name)
    assert record(acceptance, 11, {
        "byte_identical": (not diffs, f"{len(DEFAULTS) - len(diffs)}/{len(DEFAULTS)} experiments"),
    })
