"""Fractional Dirichlet problems on pixel sets and spectral shape optimisation."""

__version__ = "0.1.0"

from .grid import BoxGrid, SetMask, ball_mask, box_mask, load_mask, make_grid, measure  # noqa: E402
from .kernel import FracParam, cns, cns_quadrature, kernel_table  # noqa: E402
from .operator import assemble, full_operator, gagliardo_seminorm, uniform_bound_check  # noqa: E402
from .solve import capacity, ks_membership, solve_eigs, solve_torsion, torsion  # noqa: E402
from .shape import (  # noqa: E402
    CostSpec,
    anneal_search,
    brute_force_min,
    evaluate_cost,
    exchange_search,
    gamma_s_distance,
    sweep_s_minima,
)
