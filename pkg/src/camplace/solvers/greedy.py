"""Greedy selection under the budget and one-camera-per-location rules."""

from __future__ import annotations

import time

import numpy as np

from camplace.solvers.base import (
    HEURISTIC, OPTIMAL, BinaryUtility, Instance, SolverConfig, SolverReport,
    SquaredUtility, make_report,
)


def _greedy(inst: Instance, util, fallback=None):
    chosen = np.zeros(inst.n_g, dtype=bool)
    avail = np.ones(inst.n_g, dtype=bool)
    counts = np.zeros(inst.n_p, dtype=np.int64)
    trace = [util.objective(util.value(counts))]
    for _ in range(inst.k):
        if not avail.any():
            break
        gains = inst.rows_f @ util.weights(counts)
        gains[~avail] = -1.0
        i = int(np.argmax(gains))
        if gains[i] <= 0:
            if fallback is None:
                break
            alt = inst.rows_f @ fallback(counts)
            alt[~avail] = -1.0
            i = int(np.argmax(alt))
            if alt[i] <= 0:
                break
        chosen[i] = True
        avail &= inst.groups != inst.groups[i]
        counts += inst.rows[i]
        trace.append(util.objective(util.value(counts)))
    return chosen, counts, trace


def solve_greedy_proposed(V, gamma, cfg: SolverConfig, groups=None) -> SolverReport:
    """Greedy on the squared-deficit cost; ties go to the lowest candidate index.

    The reported bound uses submodularity: no feasible selection can gain more
    over the greedy result than the ``budget`` best single-camera gains taken
    from distinct location groups.
    """
    t0 = time.perf_counter()
    inst = Instance(V, gamma, groups, cfg.budget)
    util = SquaredUtility(inst)
    chosen, counts, trace = _greedy(inst, util)
    gains = inst.rows_f @ util.weights(counts)
    avail = np.ones(inst.n_g, dtype=bool)
    bound = util.value(counts) + int(round(inst.top_k_sum(gains, avail, inst.k)))
    status = OPTIMAL if bound == util.value(counts) else HEURISTIC
    return make_report("proposed-greedy", inst, util, chosen, status,
                       time.perf_counter() - t0, len(trace) - 1, bound, trace)


def solve_greedy_binary(V, gamma, cfg: SolverConfig, groups=None) -> SolverReport:
    """Greedy on the number of targets reaching full coverage.

    When no candidate completes any target (common when gamma >= 2), the step
    falls back to the candidate seeing the most not-yet-seen targets, and
    stops if that is zero as well.
    """
    t0 = time.perf_counter()
    inst = Instance(V, gamma, groups, cfg.budget)
    util = BinaryUtility(inst)

    def unseen(counts):
        return ((counts == 0) & (inst.gamma > 0)).astype(np.float64)

    chosen, _, trace = _greedy(inst, util, fallback=unseen)
    return make_report("greedy-binary", inst, util, chosen, HEURISTIC,
                       time.perf_counter() - t0, len(trace) - 1, None, trace)


def greedy_incumbent(inst: Instance, util) -> np.ndarray:
    """Warm start for branch-and-bound: greedy on the same utility."""
    fallback = None
    if isinstance(util, BinaryUtility):
        def fallback(counts):
            return ((counts == 0) & (inst.gamma > 0)).astype(np.float64)
    chosen, _, _ = _greedy(inst, util, fallback)
    return chosen
