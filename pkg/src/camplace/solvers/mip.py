"""Mixed-integer linear model of the squared-deficit placement problem.

Per target voxel ``j`` the model carries an epigraph variable ``Q_j`` and an
incremental piecewise-linear encoding of its square with pieces
``k = 0..gamma_max``::

    Q_j + sum_i V_ij x_i >= gamma_j            (Q_j >= 0: shortfall epigraph)
    Q_j - sum_k f_j_k <= 0                     (Q_j bounded by the active piece)
    lo_k pl_j_k <= f_j_k <= hi_k pl_j_k        (piece intervals, integer form)
    sum_k pl_j_k = 1                           (exactly one active piece)

    minimize sum_j sum_k k * f_j_k

Printed piece intervals are half-open ``(k - 0.5, k + 0.5]``; for integer
``f`` that is ``f = k``. Piece 0 spans ``(lb_j, 0.5]`` with
``lb_j = gamma_j - #(cameras seeing j)`` capped at -0.5, and the top piece
spans ``(gamma_max - 0.5, gamma_j]``. Active piece ``k`` costs ``k * k``, so
the cheapest feasible piece for a shortfall ``d`` is ``k = d`` at cost
``d**2``.

Camera constraints: ``sum_i x_i <= budget`` and ``sum_{i in group} x_i <= 1``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from camplace.errors import ConfigError
from camplace.solvers.base import Instance, SolverConfig, SolverReport, SquaredUtility
from camplace.solvers.bnb import branch_and_bound


@dataclass
class Constraint:
    name: str
    index: np.ndarray
    coef: np.ndarray
    sense: str  # "<=", ">=" or "="
    rhs: float


@dataclass(eq=False)
class MipModel:
    """Explicit linear model plus the problem data it was built from."""

    var_names: list[str]
    var_lb: np.ndarray
    var_ub: np.ndarray
    var_kind: list[str]  # "B" binary, "I" general integer
    objective: dict[int, float]
    constraints: list[Constraint]
    rows: np.ndarray
    gamma: np.ndarray
    groups: np.ndarray
    budget: int
    gamma_max: int
    lb: np.ndarray
    var_index: dict[str, int] = field(default_factory=dict)

    @property
    def n_g(self) -> int:
        return self.rows.shape[0]

    @property
    def n_p(self) -> int:
        return self.rows.shape[1]

    def index(self, name: str) -> int:
        return self.var_index[name]

    def objective_value(self, values: np.ndarray) -> float:
        return float(sum(c * values[i] for i, c in self.objective.items()))

    def violated(self, values: np.ndarray, tol: float = 1e-9) -> list[str]:
        """Names of constraints (and ``bounds:<var>``) the assignment breaks."""
        bad = []
        values = np.asarray(values, dtype=float)
        for c in self.constraints:
            lhs = float(np.dot(c.coef, values[c.index]))
            ok = {"<=": lhs <= c.rhs + tol, ">=": lhs >= c.rhs - tol,
                  "=": abs(lhs - c.rhs) <= tol}[c.sense]
            if not ok:
                bad.append(c.name)
        out = (values < self.var_lb - tol) | (values > self.var_ub + tol)
        bad += [f"bounds:{self.var_names[i]}" for i in np.flatnonzero(out)]
        return bad


def piece_bounds(gamma_j: int, gamma_max: int, lb_j: float):
    """Integer ``(lo, hi)`` per piece ``k = 0..gamma_max`` for one voxel."""
    bounds = []
    for k in range(gamma_max + 1):
        lo = lb_j if k == 0 else k - 0.5
        hi = gamma_j if k == gamma_max else k + 0.5
        # integer f with lo < f <= hi
        bounds.append((math.floor(lo) + 1, math.floor(hi)))
    return bounds


def build_mip(V, gamma, cfg: SolverConfig, groups=None) -> MipModel:
    inst = Instance(V, gamma, groups, cfg.budget)
    K = int(cfg.gamma_max)
    if inst.n_p and inst.gamma.max() > K:
        raise ConfigError(f"gamma value {int(inst.gamma.max())} exceeds gamma_max {K}")
    if inst.n_p and inst.gamma.min() < 0:
        raise ConfigError("gamma values must be non-negative")
    n_g, n_p = inst.n_g, inst.n_p
    seen_by = inst.rows.sum(axis=0, dtype=np.int64)
    lb = np.minimum(inst.gamma - seen_by, -0.5).astype(float)

    names, lo_b, hi_b, kind = [], [], [], []

    def add(name, lo, hi, k):
        names.append(name)
        lo_b.append(lo)
        hi_b.append(hi)
        kind.append(k)
        return len(names) - 1

    x = [add(f"x_{i}", 0, 1, "B") for i in range(n_g)]
    q = [add(f"Q_{j}", 0, np.inf, "I") for j in range(n_p)]
    pl = [[add(f"pl_{j}_{k}", 0, 1, "B") for k in range(K + 1)] for j in range(n_p)]
    pieces = [piece_bounds(int(inst.gamma[j]), K, lb[j]) for j in range(n_p)]
    f = [[add(f"f_{j}_{k}", min(lo, 0), max(hi, 0), "I")
          for k, (lo, hi) in enumerate(pieces[j])] for j in range(n_p)]

    objective = {f[j][k]: float(k) for j in range(n_p) for k in range(K + 1)}
    cons: list[Constraint] = []

    def con(name, idx, coef, sense, rhs):
        cons.append(Constraint(name, np.asarray(idx, dtype=np.int64),
                               np.asarray(coef, dtype=float), sense, float(rhs)))

    x_arr = np.asarray(x, dtype=np.int64)
    for j in range(n_p):
        viewers = np.flatnonzero(inst.rows[:, j])
        con(f"epi_{j}", [q[j], *x_arr[viewers]], [1.0] + [1.0] * viewers.size, ">=", inst.gamma[j])
        con(f"link_{j}", [q[j], *f[j]], [1.0] + [-1.0] * (K + 1), "<=", 0)
        for k, (lo, hi) in enumerate(pieces[j]):
            con(f"plo_{j}_{k}", [f[j][k], pl[j][k]], [1.0, -lo], ">=", 0)
            con(f"phi_{j}_{k}", [f[j][k], pl[j][k]], [1.0, -hi], "<=", 0)
        con(f"one_{j}", pl[j], [1.0] * (K + 1), "=", 1)
    con("budget", x_arr, np.ones(n_g), "<=", cfg.budget)
    for g in range(inst.n_l):
        members = np.flatnonzero(inst.groups == g)
        if members.size > 1:
            con(f"loc_{g}", x_arr[members], np.ones(members.size), "<=", 1)

    model = MipModel(
        var_names=names,
        var_lb=np.asarray(lo_b, dtype=float),
        var_ub=np.asarray(hi_b, dtype=float),
        var_kind=kind,
        objective=objective,
        constraints=cons,
        rows=inst.rows,
        gamma=inst.gamma,
        groups=inst.groups,
        budget=int(cfg.budget),
        gamma_max=K,
        lb=lb,
    )
    model.var_index = {n: i for i, n in enumerate(names)}
    return model


def solve_mip(model: MipModel, cfg: SolverConfig, warm_start: bool = True) -> SolverReport:
    """Branch-and-bound on the model's selection variables.

    Bounding relies on submodularity of the squared-deficit utility; see
    :mod:`camplace.solvers.bnb`. The reported objective equals the model
    objective at the optimal auxiliary completion of the returned ``x``.
    """
    if not cfg.time_budget > 0:
        raise ConfigError(f"time_budget must be positive, got {cfg.time_budget}")
    inst = Instance(model.rows, model.gamma, model.groups, model.budget)
    return branch_and_bound("proposed-mip", inst, SquaredUtility(inst), cfg, warm_start)


# ---------------------------------------------------------------------------
# auxiliary minimization by enumeration


def _voxel_block(model: MipModel, j: int):
    K = model.gamma_max
    aux = [model.index(f"Q_{j}")]
    aux += [model.index(f"pl_{j}_{k}") for k in range(K + 1)]
    aux += [model.index(f"f_{j}_{k}") for k in range(K + 1)]
    aux_set = set(aux)
    cons = [c for c in model.constraints if aux_set.intersection(c.index.tolist())]
    return aux, cons


def auxiliary_minimum(model: MipModel, x, q_max: int | None = None) -> int | None:
    """Minimum model objective over all auxiliary variables with ``x`` fixed.

    Every integer assignment of each voxel's ``Q, pl, f`` within its variable
    bounds (``Q`` capped at ``q_max``, default ``gamma_max + 1``) is checked
    against the model's own constraint rows. Returns ``None`` if some voxel
    has no feasible completion or the camera constraints fail.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != model.n_g:
        raise ConfigError(f"x has length {x.size}, model has {model.n_g} cameras")
    q_max = model.gamma_max + 1 if q_max is None else q_max
    values = np.zeros(len(model.var_names))
    values[:model.n_g] = x
    for c in model.constraints:
        if c.name == "budget" or c.name.startswith("loc_"):
            if float(np.dot(c.coef, values[c.index])) > c.rhs + 1e-9:
                return None
    total = 0
    for j in range(model.n_p):
        aux, cons = _voxel_block(model, j)
        domains = []
        for v in aux:
            lo = model.var_lb[v]
            hi = min(model.var_ub[v], q_max)
            domains.append(np.arange(int(lo), int(hi) + 1))
        grid = np.array(list(itertools.product(*domains)), dtype=float)
        full = np.tile(values, (grid.shape[0], 1))
        full[:, aux] = grid
        feasible = np.ones(grid.shape[0], dtype=bool)
        for c in cons:
            lhs = full[:, c.index] @ c.coef
            if c.sense == "<=":
                feasible &= lhs <= c.rhs + 1e-9
            elif c.sense == ">=":
                feasible &= lhs >= c.rhs - 1e-9
            else:
                feasible &= np.abs(lhs - c.rhs) <= 1e-9
        if not feasible.any():
            return None
        obj_idx = [v for v in aux if v in model.objective]
        obj = full[:, obj_idx] @ np.array([model.objective[v] for v in obj_idx])
        total += int(round(obj[feasible].min()))
    return total


# ---------------------------------------------------------------------------
# CPLEX LP export


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def _terms(index, coef, names, first_plain=True):
    out = []
    for n, (i, c) in enumerate(zip(index, coef)):
        mag = _fmt(abs(c))
        sign = "-" if c < 0 else "+"
        if n == 0 and first_plain:
            out.append(f"{'-' if c < 0 else ''}{mag} {names[i]}")
        else:
            out.append(f"{sign} {mag} {names[i]}")
    return out


def _wrap(head: str, terms: list[str], tail: str = "", per_line: int = 8) -> list[str]:
    lines = []
    for k in range(0, max(len(terms), 1), per_line):
        chunk = " ".join(terms[k:k + per_line])
        lines.append((head if k == 0 else "   ") + chunk)
    if tail:
        lines[-1] += tail
    return lines


def lp_text(model: MipModel) -> str:
    names = model.var_names
    lines = ["\\ camplace squared-deficit placement model", "Minimize"]
    if model.objective:
        idx = list(model.objective)
        terms = _terms(idx, [model.objective[i] for i in idx], names)
        lines += _wrap(" obj: ", terms)
    else:
        lines.append(" obj: 0")
    lines.append("Subject To")
    for c in model.constraints:
        if c.index.size == 0:
            continue
        sense = c.sense
        terms = _terms(c.index, c.coef, names)
        lines += _wrap(f" {c.name}: ", terms, f" {sense} {_fmt(c.rhs)}")
    lines.append("Bounds")
    for i, n in enumerate(names):
        if model.var_kind[i] == "B":
            continue
        lo, hi = model.var_lb[i], model.var_ub[i]
        hi_s = "+inf" if np.isinf(hi) else _fmt(hi)
        lines.append(f" {_fmt(lo)} <= {n} <= {hi_s}")
    generals = [n for n, k in zip(names, model.var_kind) if k == "I"]
    binaries = [n for n, k in zip(names, model.var_kind) if k == "B"]
    if generals:
        lines.append("General")
        lines += [" " + " ".join(generals[k:k + 10]) for k in range(0, len(generals), 10)]
    if binaries:
        lines.append("Binary")
        lines += [" " + " ".join(binaries[k:k + 10]) for k in range(0, len(binaries), 10)]
    lines.append("End")
    return "\n".join(lines) + "\n"


def export_lp(model: MipModel, path) -> Path:
    """Write the model in CPLEX LP format."""
    path = Path(path)
    try:
        path.write_text(lp_text(model))
    except OSError as exc:
        raise ConfigError(f"cannot write LP file {path}: {exc}") from exc
    return path
