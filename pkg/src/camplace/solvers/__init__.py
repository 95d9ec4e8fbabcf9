"""Camera subset selection."""

from camplace.solvers.base import (
    HEURISTIC, INFEASIBLE, METHODS, OPTIMAL, TIME_LIMIT, SolverConfig, SolverReport,
)
from camplace.solvers.exhaustive import enumerate_exact
from camplace.solvers.greedy import solve_greedy_binary, solve_greedy_proposed
from camplace.solvers.mip import MipModel, auxiliary_minimum, build_mip, export_lp, solve_mip
from camplace.solvers.zhao import solve_zhao


def solve(V, gamma, cfg: SolverConfig, groups=None) -> SolverReport:
    """Dispatch on ``cfg.method``."""
    if cfg.method == "proposed-mip":
        return solve_mip(build_mip(V, gamma, cfg, groups), cfg)
    if cfg.method == "proposed-greedy":
        return solve_greedy_proposed(V, gamma, cfg, groups)
    if cfg.method == "greedy-binary":
        return solve_greedy_binary(V, gamma, cfg, groups)
    if cfg.method == "zhao-mip":
        return solve_zhao(V, gamma, cfg, groups)
    return enumerate_exact(V, gamma, cfg, groups)


__all__ = [
    "HEURISTIC", "INFEASIBLE", "METHODS", "OPTIMAL", "TIME_LIMIT",
    "SolverConfig", "SolverReport", "MipModel",
    "auxiliary_minimum", "build_mip", "enumerate_exact", "export_lp",
    "solve", "solve_greedy_binary", "solve_greedy_proposed", "solve_mip", "solve_zhao",
]
