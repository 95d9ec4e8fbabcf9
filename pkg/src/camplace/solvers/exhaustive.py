"""Exhaustive search over feasible selections (reference oracle)."""

from __future__ import annotations

import itertools
import time

import numpy as np

from camplace.errors import CapacityError
from camplace.solvers.base import (
    OPTIMAL, BinaryUtility, Instance, SolverConfig, SolverReport, SquaredUtility, make_report,
)

DEFAULT_CAP = 10_000_000


def count_selections(group_sizes, k: int) -> int:
    """Number of selections of at most ``k`` cameras from distinct groups."""
    # elementary symmetric polynomials of the group sizes, degrees 0..k
    e = [1] + [0] * k
    for s in group_sizes:
        for d in range(k, 0, -1):
            e[d] += e[d - 1] * int(s)
    return sum(e)


def enumerate_exact(V, gamma, cfg: SolverConfig, groups=None, utility: str = "squared",
                    cap: int = DEFAULT_CAP) -> SolverReport:
    """True optimum by enumeration.

    Among optimal selections the smallest one wins, then the lexicographically
    smallest index tuple. ``utility`` is ``"squared"`` (deficit cost) or
    ``"binary"`` (targets reaching full coverage).
    """
    t0 = time.perf_counter()
    inst = Instance(V, gamma, groups, cfg.budget)
    util = SquaredUtility(inst) if utility == "squared" else BinaryUtility(inst)
    members = [np.flatnonzero(inst.groups == g).tolist() for g in range(inst.n_l)]
    total = count_selections([len(m) for m in members], inst.k)
    if total > cap:
        raise CapacityError(
            f"{total} selections exceed the enumeration cap {cap}; use solve_mip instead"
        )
    best_u, best_sel = None, ()
    n_eval = 0
    for size in range(inst.k + 1):
        for gsel in itertools.combinations(range(inst.n_l), size):
            for combo in itertools.product(*(members[g] for g in gsel)):
                n_eval += 1
                sel = tuple(sorted(combo))
                counts = inst.rows[list(sel)].sum(axis=0, dtype=np.int64)
                u = util.value(counts)
                if best_u is None or u > best_u or (u == best_u and len(sel) == len(best_sel) and sel < best_sel):
                    best_u, best_sel = u, sel
    chosen = np.zeros(inst.n_g, dtype=bool)
    chosen[list(best_sel)] = True
    return make_report("exhaustive", inst, util, chosen, OPTIMAL,
                       time.perf_counter() - t0, n_eval, best_u)
