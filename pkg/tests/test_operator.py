import sys
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate

from fracshape.experiments import BUMP_DIRICHLET_ENERGY, bump
from fracshape.grid import SetMask, make_grid
from fracshape.kernel import FracParam, kernel_table
from fracshape.operator import (
    OperatorError,
    assemble,
    dump_triplets,
    full_operator,
    full_stiffness,
    gagliardo_seminorm,
    uniform_bound_check,
)
from fracshape.solve import torsion

sys.path.insert(0, str(Path(__file__).parent / "oracles"))
import compute_oracles  # noqa: E402


def random_masks(grid, count, seed, p=0.5):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        m = rng.random(grid.n_cells) < p
        if m.any():
            out.append(SetMask(grid, m))
    return out


@pytest.mark.parametrize("s", [0.3, 0.75])
def test_matches_loop_built_oracle(s):
    g = make_grid(1, (0, 1), 8)
    h, _, W, T = compute_oracles.matrices_1d(0.0, 1.0, 8, s)
    tab = kernel_table(g, FracParam(s, 1))
    np.testing.assert_allclose(tab.W, W, rtol=1e-10, atol=0)
    np.testing.assert_allclose(tab.T, T, rtol=1e-10)


def test_symmetry_exact():
    for dim, cells in ((1, 20), (2, 6)):
        g = make_grid(dim, (0, 1), cells)
        for s in (0.2, 0.5, 0.9, 1.0):
            K = full_stiffness(g, FracParam(s, dim))
            assert np.array_equal(K, K.T)


def test_m_matrix_on_random_2d_masks():
    g = make_grid(2, (0, 1), 7)
    for k, mask in enumerate(random_masks(g, 100, seed=11)):
        s = (0.25, 0.5, 0.75, 1.0)[k % 4]
        K = assemble(g, FracParam(s, 2), mask).K
        off = K - np.diag(np.diag(K))
        assert np.all(off <= 0)
        if s < 1:
            assert np.all(np.diag(K) > np.abs(off).sum(axis=1))
        else:
            # the 5-point stencil is only weakly dominant in fully interior rows
            assert np.all(np.diag(K) >= np.abs(off).sum(axis=1))
            assert np.linalg.eigvalsh(K)[0] > 0


def test_one_cell_domain():
    g = make_grid(1, (0, 1), 10)
    p = FracParam(0.4, 1)
    op = assemble(g, p, SetMask.from_indices(g, [4]))
    tab = kernel_table(g, p)
    assert op.K.shape == (1, 1)
    assert op.K[0, 0] == pytest.approx(p.cns * (tab.W[4].sum() + tab.T[4]), rel=1e-14)
    assert op.K[0, 0] > 0


def test_classical_stencil():
    n = 16
    g = make_grid(1, (0, 1), n)
    K = assemble(g, FracParam(1.0, 1), SetMask.full(g)).K / g.cell_volume
    h2 = g.h**2
    # interior rows are the (2, -1)/h^2 stencil
    for i in range(1, n - 1):
        row = np.zeros(n)
        row[i - 1 : i + 2] = [-1, 2, -1]
        np.testing.assert_allclose(K[i] * h2, row, atol=1e-12)
    # the box face sits h/2 from the first centre: ghost value -u_0 gives 3/h^2
    assert K[0, 0] * h2 == pytest.approx(3.0)
    assert K[0, 1] * h2 == pytest.approx(-1.0)


def test_classical_stencil_2d():
    g = make_grid(2, (0, 1), 4)
    K = full_stiffness(g, FracParam(1.0, 2))
    # dimensionless for n = 2
    assert K[5, 5] == 4 and K[0, 0] == 6 and K[1, 1] == 5
    assert K[5, 6] == -1 and K[5, 9] == -1 and K[5, 10] == 0


def test_energy_matches_seminorm():
    rng = np.random.default_rng(5)
    cases = [(make_grid(1, (0, 1), 24), 0.3), (make_grid(1, (-1, 2), 18), 0.85),
             (make_grid(2, (0, 1), 6), 0.45), (make_grid(2, (0, 2), 5), 0.9)]
    for k in range(20):
        g, s = cases[k % 4]
        p = FracParam(s, g.dim)
        mask = random_masks(g, 1, seed=100 + k)[0]
        op = assemble(g, p, mask)
        u = rng.standard_normal(op.size)
        semi = gagliardo_seminorm(op.extend(u), g, p)
        assert op.energy(u) == pytest.approx(p.cns / 2 * semi, rel=1e-10)


def test_positive_definite():
    g = make_grid(2, (0, 1), 6)
    for k, mask in enumerate(random_masks(g, 30, seed=3, p=0.3)):
        s = (0.1, 0.5, 0.99, 1.0)[k % 4]
        assert np.linalg.eigvalsh(assemble(g, FracParam(s, 2), mask).K)[0] > 0


def test_principal_submatrix():
    g = make_grid(2, (0, 1), 6)
    p = FracParam(0.6, 2)
    rng = np.random.default_rng(8)
    for B in random_masks(g, 20, seed=9, p=0.7):
        A = SetMask(g, B.flat & (rng.random(g.n_cells) < 0.6))
        if A.count == 0:
            continue
        KA, KB = assemble(g, p, A).K, assemble(g, p, B).K
        pos = np.searchsorted(B.indices, A.indices)
        assert np.array_equal(KA, KB[np.ix_(pos, pos)])


def test_assemble_errors():
    g = make_grid(1, (0, 1), 8)
    with pytest.raises(OperatorError, match="empty"):
        assemble(g, FracParam(0.5, 1), SetMask.empty(g))
    other = make_grid(1, (0, 1), 4)
    with pytest.raises(OperatorError):
        assemble(g, FracParam(0.5, 1), SetMask.full(other))
    with pytest.raises(OperatorError):
        assemble(g, FracParam(0.5, 2), SetMask.full(g))


def test_matrices_are_read_only():
    g = make_grid(1, (0, 1), 8)
    op = full_operator(g, FracParam(0.5, 1))
    with pytest.raises(ValueError):
        op.K[0, 0] = 1.0


def test_seminorm_basics():
    g = make_grid(1, (0, 1), 32)
    p = FracParam(0.6, 1)
    u = np.sin(np.pi * g.centers()[:, 0])
    assert gagliardo_seminorm(np.zeros(32), g, p) == 0
    base = gagliardo_seminorm(u, g, p)
    assert gagliardo_seminorm(3.0 * u, g, p) == pytest.approx(9 * base, rel=1e-13)
    # constants are not free: the exterior is zero
    assert gagliardo_seminorm(np.ones(32), g, p) > 0
    with pytest.raises(OperatorError):
        gagliardo_seminorm(u, g, FracParam(1.0, 1))


def test_bump_energy_limit():
    g = make_grid(1, (0, 1), 1024)
    p = FracParam(0.999, 1)
    u = bump(g.centers()[:, 0])
    ratio = p.cns / 2 * gagliardo_seminorm(u, g, p) / BUMP_DIRICHLET_ENERGY
    assert abs(ratio - 1) <= 0.05


def test_bump_dirichlet_energy_exact():
    # u' = 8x on (0, 1/2) and mirrored, so the energy is 2 * int_0^{1/2} 64 x^2 dx
    val, _ = integrate.quad(lambda x: (8 * x) ** 2, 0, 0.5)
    assert 2 * val == pytest.approx(16 / 3, rel=1e-14)
    x = np.array([0.1, 0.25, 0.7])
    np.testing.assert_allclose(bump(x), [0.04, 0.25, 0.36], rtol=1e-14)
    assert BUMP_DIRICHLET_ENERGY == 16 / 3


def test_uniform_bound_check_basics():
    g = make_grid(1, (0, 1), 64)
    p = FracParam(0.5, 1)
    u = torsion(g, p, SetMask.full(g))
    assert uniform_bound_check(np.zeros(64), g, p) == 0
    assert uniform_bound_check(2 * u, g, p) == pytest.approx(4 * uniform_bound_check(u, g, p), rel=1e-13)


def test_uniform_bound_on_torsion_sweep():
    g = make_grid(1, (0, 1), 64)
    A = SetMask.from_indices(g, range(10, 50))
    vals = []
    for s in (0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9):
        p = FracParam(s, 1)
        vals.append(uniform_bound_check(torsion(g, p, A), g, p))
    assert max(vals) < 5.0
    assert all(b <= 1.5 * a for a, b in zip(vals, vals[1:]))


def test_dump_triplets(tmp_path):
    g = make_grid(1, (0, 1), 4)
    op = assemble(g, FracParam(1.0, 1), SetMask.from_indices(g, [0, 1, 3]))
    path = tmp_path / "K.txt"
    dump_triplets(op, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# fracshape operator n=3 s=1.0"
    entries = {(int(i), int(j)): float(v) for i, j, v in (ln.split() for ln in lines[1:])}
    assert len(entries) == np.count_nonzero(op.K)
    for (i, j), v in entries.items():
        assert v == op.K[i, j]
