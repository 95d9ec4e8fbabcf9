"""Depth-first branch-and-bound over camera selections.

Each search frame owns a partial selection and walks the available
candidates in decreasing marginal-gain order: include the candidate
(recursing one level deeper) and then exclude it. The frame's optimistic
bound is the current utility plus the best ``k`` per-group bound scores of
the still-available candidates, where ``k`` is the remaining budget. A frame
stops as soon as its bound cannot beat the incumbent.

Recursion depth is bounded by the budget, not by the number of candidates.
"""

from __future__ import annotations

import math
import time

import numpy as np

from camplace.solvers.base import (
    OPTIMAL, TIME_LIMIT, Instance, SolverConfig, SquaredUtility, make_report,
)
from camplace.solvers.greedy import greedy_incumbent


class _Stop(Exception):
    pass


class BranchAndBound:
    def __init__(self, inst: Instance, util, cfg: SolverConfig):
        self.inst = inst
        self.util = util
        self.cfg = cfg
        self.nodes = 0
        self.frame_bounds: list[int] = []
        self.trace: list[tuple[int, int, int]] = []
        self._last_global = None

    # -- bookkeeping -----------------------------------------------------
    def _global_bound(self) -> int:
        ub = max([self.best_u, *self.frame_bounds])
        # frames only tighten; keep the reported bound monotone regardless
        if self._last_global is not None:
            ub = min(ub, self._last_global)
        self._last_global = ub
        return ub

    def _record(self):
        entry = (self.nodes, self.util.objective(self.best_u),
                 self.util.objective(self._global_bound()))
        if not self.trace or self.trace[-1][1:] != entry[1:]:
            self.trace.append(entry)

    def _tick(self):
        self.nodes += 1
        limit = self.cfg.node_limit
        if (limit is not None and self.nodes > limit) or time.perf_counter() > self.deadline:
            # snapshot before the frames unwind
            self.stop_bound = self._global_bound()
            raise _Stop

    def _offer(self, chosen, u):
        if u > self.best_u:
            self.best_u = u
            self.best_chosen = chosen.copy()
            self._record()

    # -- search ----------------------------------------------------------
    def _scores(self, counts):
        inst, util = self.inst, self.util
        gains = inst.rows_f @ util.weights(counts)
        if isinstance(util, SquaredUtility):
            return gains, gains
        return gains, inst.rows_f @ util.bound_weights(counts)

    def _bound(self, scores, u, avail, k):
        extra = self.inst.top_k_sum(scores, avail, k)
        return u + int(math.floor(round(extra) / self.util.divisor))

    def _search(self, chosen, counts, u, avail, k, parent_bound):
        inst, util = self.inst, self.util
        depth = len(self.frame_bounds)
        self.frame_bounds.append(parent_bound)
        # gains depend only on this frame's selection, not on exclusions
        gains = scores = None
        try:
            while True:
                self._tick()
                if k == 0 or not avail.any():
                    return
                if scores is None:
                    gains, scores = self._scores(counts)
                bound = min(self._bound(scores, u, avail, k), parent_bound)
                self.frame_bounds[depth] = bound
                if bound <= self.best_u:
                    return
                # branch on largest gain, then largest bound score, then lowest index
                key = np.where(avail, gains * (scores.max(initial=0) + 1) + scores, -1.0)
                i = int(np.argmax(key))
                if key[i] <= 0:
                    return
                child_chosen = chosen.copy()
                child_chosen[i] = True
                child_counts = counts + inst.rows[i]
                child_u = u + int(round(gains[i]))
                self._offer(child_chosen, child_u)
                child_avail = avail & (inst.groups != inst.groups[i])
                self._search(child_chosen, child_counts, child_u, child_avail, k - 1, bound)
                avail = avail.copy()
                avail[i] = False
                self._record()
        finally:
            self.frame_bounds.pop()

    def run(self, method: str, warm_start=None):
        inst, util = self.inst, self.util
        t0 = time.perf_counter()
        self.deadline = t0 + self.cfg.time_budget
        empty = np.zeros(inst.n_g, dtype=bool)
        counts = inst.counts(empty)
        avail = np.ones(inst.n_g, dtype=bool)
        self.best_chosen = empty
        self.best_u = util.value(counts)
        root_bound = self._bound(self._scores(counts)[1], self.best_u, avail, inst.k)
        self.frame_bounds = [root_bound]
        if warm_start is not None:
            self._offer(np.asarray(warm_start, dtype=bool), util.value(inst.counts(warm_start)))
        self._record()
        status = OPTIMAL
        self.frame_bounds = []
        try:
            self._search(empty, counts, util.value(counts), avail, inst.k, root_bound)
        except _Stop:
            status = TIME_LIMIT
        if status == OPTIMAL:
            self.frame_bounds = []
            self._last_global = self.best_u
            bound_u = self.best_u
        else:
            bound_u = self.stop_bound
            self.frame_bounds = [bound_u]
        self._record()
        return make_report(method, inst, util, self.best_chosen, status,
                           time.perf_counter() - t0, self.nodes, bound_u, list(self.trace))


def branch_and_bound(method, inst: Instance, util, cfg: SolverConfig, warm_start=True):
    if cfg.time_budget <= 0:
        raise ValueError("time_budget must be positive")
    start = greedy_incumbent(inst, util) if warm_start else None
    return BranchAndBound(inst, util, cfg).run(method, start)
