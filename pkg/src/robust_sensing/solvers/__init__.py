"""Estimators for robust sensing, noise-free and noisy."""

from .prox import block_soft_threshold, block_soft_threshold_rows, scalar_huber, vector_huber_cost
from .rs import (
    log_surrogate_cost,
    solve_genie_ls,
    solve_l1,
    solve_ls,
    solve_p1,
    solve_p2,
    sum_of_norms,
)
from .rsn import (
    HUBER_TAU,
    colored_objective,
    lambda_rule_of_thumb,
    p3_objective,
    p4_objective,
    solve_huber_scalar,
    solve_p3,
    solve_p3_colored,
    solve_p3_path,
    solve_p4,
    solve_p4_colored,
)

__all__ = [
    "HUBER_TAU",
    "block_soft_threshold",
    "block_soft_threshold_rows",
    "colored_objective",
    "lambda_rule_of_thumb",
    "log_surrogate_cost",
    "p3_objective",
    "p4_objective",
    "scalar_huber",
    "solve_genie_ls",
    "solve_huber_scalar",
    "solve_l1",
    "solve_ls",
    "solve_p1",
    "solve_p2",
    "solve_p3",
    "solve_p3_colored",
    "solve_p3_path",
    "solve_p4",
    "solve_p4_colored",
    "sum_of_norms",
    "vector_huber_cost",
]
