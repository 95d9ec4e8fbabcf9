"""Coverage cost and evaluation metrics.

All costs are exact integers; only :func:`coverage_gap` and
:func:`nontriangulatable_fraction` return floats.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from camplace.errors import ConfigError


@dataclass(frozen=True, eq=False)
class Selection:
    """Chosen candidates as a boolean vector of length ``n_g``."""

    chosen: np.ndarray
    budget: int

    def __post_init__(self):
        chosen = np.asarray(self.chosen, dtype=bool).reshape(-1)
        chosen.setflags(write=False)
        object.__setattr__(self, "chosen", chosen)
        if int(chosen.sum()) > self.budget:
            raise ConfigError(f"{int(chosen.sum())} cameras chosen with budget {self.budget}")

    @classmethod
    def from_indices(cls, indices, n_g: int, budget: int | None = None) -> "Selection":
        chosen = np.zeros(n_g, dtype=bool)
        chosen[np.asarray(list(indices), dtype=np.int64)] = True
        return cls(chosen, int(chosen.sum()) if budget is None else budget)

    @property
    def indices(self) -> list[int]:
        return np.flatnonzero(self.chosen).tolist()

    def respects_groups(self, location_group) -> bool:
        groups = np.asarray(location_group)[self.chosen]
        return np.unique(groups).size == groups.size


@dataclass(frozen=True, eq=False)
class CoverageProfile:
    counts: np.ndarray
    deficits: np.ndarray


def _rows(V) -> np.ndarray:
    return np.asarray(getattr(V, "rows", V), dtype=bool)


def _chosen(x, n_g: int) -> np.ndarray:
    chosen = np.asarray(getattr(x, "chosen", x))
    if chosen.dtype != bool:
        mask = np.zeros(n_g, dtype=bool)
        mask[chosen.astype(np.int64)] = True
        chosen = mask
    if chosen.size != n_g:
        raise ConfigError(f"selection has length {chosen.size}, matrix has {n_g} rows")
    return chosen


def _gamma(gamma, n_p: int) -> np.ndarray:
    g = np.asarray(getattr(gamma, "gamma", gamma), dtype=np.int64).reshape(-1)
    if g.size != n_p:
        raise ConfigError(f"gamma has length {g.size}, matrix has {n_p} columns")
    return g


def coverage_counts(V, x) -> np.ndarray:
    rows = _rows(V)
    chosen = _chosen(x, rows.shape[0])
    return rows[chosen].sum(axis=0, dtype=np.int64)


def coverage_profile(V, x, gamma) -> CoverageProfile:
    rows = _rows(V)
    counts = coverage_counts(rows, x)
    g = _gamma(gamma, rows.shape[1])
    return CoverageProfile(counts, np.maximum(g - counts, 0))


def deficit_cost(V, x, gamma) -> int:
    """Sum over targets of the squared coverage shortfall."""
    d = coverage_profile(V, x, gamma).deficits
    return int(np.dot(d, d))


def max_cost(gamma) -> int:
    g = np.asarray(getattr(gamma, "gamma", gamma), dtype=np.int64)
    return int(np.dot(g, g))


def coverage_gap(V, x, gamma) -> float:
    """Deficit cost normalized by the cost of selecting nothing."""
    rows = _rows(V)
    denom = max_cost(_gamma(gamma, rows.shape[1]))
    if denom == 0:
        raise ConfigError("coverage gap is undefined when every gamma is zero")
    return deficit_cost(rows, x, gamma) / denom


def nontriangulatable_fraction(V, x) -> float:
    """Fraction of targets seen by fewer than two chosen cameras."""
    rows = _rows(V)
    if rows.shape[1] == 0:
        raise ConfigError("nontriangulatable fraction needs at least one target")
    counts = coverage_counts(rows, x)
    return float(np.count_nonzero(counts < 2)) / rows.shape[1]


def marginal_gain(V, x, gamma, i: int) -> int:
    """Decrease in deficit cost from adding candidate ``i``."""
    rows = _rows(V)
    chosen = _chosen(x, rows.shape[0])
    if chosen[i]:
        raise ConfigError(f"candidate {i} is already chosen")
    d = coverage_profile(rows, chosen, gamma).deficits
    seen = rows[i] & (d > 0)
    return int(np.sum(2 * d[seen] - 1))


def gain_vector(rows: np.ndarray, deficits: np.ndarray) -> np.ndarray:
    """Marginal gain of every candidate given current deficits."""
    w = np.where(deficits > 0, 2 * deficits - 1, 0)
    return rows.astype(np.int64) @ w if rows.dtype != np.int64 else rows @ w
