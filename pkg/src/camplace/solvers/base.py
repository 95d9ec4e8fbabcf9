"""Shared solver types and the per-voxel utility models."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from camplace.errors import ConfigError
from camplace.objective import Selection, deficit_cost

METHODS = ("proposed-mip", "proposed-greedy", "greedy-binary", "zhao-mip", "exhaustive")

OPTIMAL = "optimal"
TIME_LIMIT = "time-limit-incumbent"
INFEASIBLE = "infeasible"
HEURISTIC = "heuristic"


@dataclass(frozen=True)
class SolverConfig:
    budget: int
    time_budget: float = 60.0
    gamma_max: int = 3
    seed: int = 0
    method: str = "proposed-mip"
    node_limit: int | None = None

    def __post_init__(self):
        if int(self.budget) != self.budget or self.budget < 1:
            raise ConfigError(f"budget must be a positive integer, got {self.budget}")
        if not self.time_budget > 0:
            raise ConfigError(f"time_budget must be positive, got {self.time_budget}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.node_limit is not None and self.node_limit < 1:
            raise ConfigError(f"node_limit must be positive, got {self.node_limit}")


@dataclass(eq=False)
class SolverReport:
    """Outcome of one solve.

    ``objective`` and ``best_bound`` are in the method's own terms: squared
    deficit (minimized) for the proposed methods, number of fully covered
    targets (maximized) for the binary baselines; ``sense`` says which.
    ``deficit_cost`` is always the squared deficit of the selection.
    """

    method: str
    selection: Selection
    objective: int
    best_bound: int | None
    status: str
    elapsed: float
    nodes_explored: int
    sense: str
    deficit_cost: int
    trace: list = field(default_factory=list, repr=False)


class Instance:
    """View matrix, targets and location groups prepared for the solvers."""

    def __init__(self, V, gamma, groups=None, budget: int = 1):
        rows = np.asarray(getattr(V, "rows", V), dtype=bool)
        if rows.ndim != 2:
            raise ConfigError("view matrix must be 2-D")
        self.rows = rows
        self.n_g, self.n_p = rows.shape
        self.gamma = np.asarray(getattr(gamma, "gamma", gamma), dtype=np.int64).reshape(-1)
        if self.gamma.size != self.n_p:
            raise ConfigError(f"gamma has length {self.gamma.size}, matrix has {self.n_p} columns")
        if groups is None:
            groups = np.arange(self.n_g)
        groups = np.asarray(getattr(groups, "location_group", groups), dtype=np.int64).reshape(-1)
        if groups.size != self.n_g:
            raise ConfigError(f"{groups.size} location groups for {self.n_g} candidates")
        # compact relabelling keeps group ids dense for the reductions below
        _, self.groups = np.unique(groups, return_inverse=True)
        self.groups = self.groups.reshape(-1)
        self.n_l = int(self.groups.max()) + 1 if self.n_g else 0
        self.budget = int(budget)
        self.k = min(self.budget, self.n_l)
        # float64 products are exact for integer sums below 2**53
        self.rows_f = rows.astype(np.float64)
        order = np.argsort(self.groups, kind="stable")
        self.group_order = order
        sorted_groups = self.groups[order]
        self.group_starts = np.flatnonzero(np.r_[True, sorted_groups[1:] != sorted_groups[:-1]]) \
            if self.n_g else np.zeros(0, np.int64)

    def counts(self, chosen) -> np.ndarray:
        return self.rows[np.asarray(chosen, dtype=bool)].sum(axis=0, dtype=np.int64)

    def group_max(self, scores: np.ndarray, avail: np.ndarray) -> np.ndarray:
        """Best available score within each location group (-inf if none)."""
        s = np.where(avail, scores, -np.inf)[self.group_order]
        return np.maximum.reduceat(s, self.group_starts) if self.n_g else s

    def top_k_sum(self, scores: np.ndarray, avail: np.ndarray, k: int) -> float:
        """Sum of the ``k`` largest per-group best scores (non-negative ones only)."""
        if k <= 0 or self.n_g == 0:
            return 0.0
        best = self.group_max(scores, avail)
        best = best[best > 0]
        if best.size > k:
            best = np.partition(best, best.size - k)[-k:]
        return float(best.sum())

    def selection(self, chosen) -> Selection:
        return Selection(np.asarray(chosen, dtype=bool), self.budget)


class SquaredUtility:
    """Utility ``sum(gamma^2) - deficit_cost``: monotone submodular in the selection."""

    sense = "min"
    divisor = 1

    def __init__(self, inst: Instance):
        self.gamma = inst.gamma
        self.total = int(np.dot(self.gamma, self.gamma))

    def value(self, counts) -> int:
        d = np.maximum(self.gamma - counts, 0)
        return self.total - int(np.dot(d, d))

    def weights(self, counts) -> np.ndarray:
        d = np.maximum(self.gamma - counts, 0)
        return np.where(d > 0, 2 * d - 1, 0).astype(np.float64)

    def bound_weights(self, counts) -> np.ndarray:
        return self.weights(counts)

    def objective(self, utility: int) -> int:
        return self.total - utility


class BinaryUtility:
    """Number of targets whose coverage count reaches gamma.

    Not submodular for gamma >= 2, so bounding uses fractional credit: a
    target lacking ``d`` cameras gives ``L / d`` to each candidate seeing it,
    with ``L = lcm(1..gamma_max)``. Any completion that newly satisfies a
    target includes at least ``d`` such candidates, so the top-k credit sum
    divided by ``L`` bounds the achievable increase.
    """

    sense = "max"

    def __init__(self, inst: Instance):
        self.gamma = inst.gamma
        self.divisor = math.lcm(*range(1, max(1, int(self.gamma.max(initial=1))) + 1))

    def value(self, counts) -> int:
        return int(np.count_nonzero(counts >= self.gamma))

    def weights(self, counts) -> np.ndarray:
        return (counts == self.gamma - 1).astype(np.float64)

    def bound_weights(self, counts) -> np.ndarray:
        d = self.gamma - counts
        w = np.zeros(d.size, dtype=np.float64)
        need = d > 0
        w[need] = self.divisor // d[need]
        return w

    def objective(self, utility: int) -> int:
        return utility


def make_report(method, inst: Instance, util, chosen, status, elapsed, nodes,
                best_utility_bound=None, trace=None) -> SolverReport:
    chosen = np.asarray(chosen, dtype=bool)
    counts = inst.counts(chosen)
    utility = util.value(counts)
    bound = None if best_utility_bound is None else util.objective(int(best_utility_bound))
    return SolverReport(
        method=method,
        selection=inst.selection(chosen),
        objective=util.objective(utility),
        best_bound=bound,
        status=status,
        elapsed=elapsed,
        nodes_explored=nodes,
        sense=util.sense,
        deficit_cost=deficit_cost(inst.rows, chosen, inst.gamma),
        trace=trace or [],
    )
