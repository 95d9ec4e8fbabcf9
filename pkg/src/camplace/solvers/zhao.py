"""Binary-coverage MILP baseline.

Reconstruction of the formulation that scores a target only once it reaches
its required coverage::

    maximize   sum_j y_j
    subject to sum_i V_ij x_i >= gamma_j * y_j,   y_j in {0, 1}
               sum_i x_i <= budget,  at most one camera per location

Solved with the same branch-and-bound engine as the proposed model.
"""

from __future__ import annotations

from camplace.solvers.base import BinaryUtility, Instance, SolverConfig, SolverReport
from camplace.solvers.bnb import branch_and_bound


def solve_zhao(V, gamma, cfg: SolverConfig, groups=None, warm_start: bool = True) -> SolverReport:
    inst = Instance(V, gamma, groups, cfg.budget)
    return branch_and_bound("zhao-mip", inst, BinaryUtility(inst), cfg, warm_start)
