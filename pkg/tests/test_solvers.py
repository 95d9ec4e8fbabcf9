import numpy as np
import pytest

from _oracles import critique_instance, random_instance
from camplace.errors import CapacityError, ConfigError
from camplace.objective import deficit_cost
from camplace.solvers import (
    HEURISTIC, OPTIMAL, TIME_LIMIT, SolverConfig, build_mip, enumerate_exact, solve,
    solve_greedy_binary, solve_greedy_proposed, solve_mip, solve_zhao,
)
from camplace.solvers.exhaustive import count_selections


def cfg(budget, **kw):
    return SolverConfig(budget=budget, **kw)


# -- greedy -------------------------------------------------------------------

def test_greedy_stops_when_saturated():
    V = np.array([[1, 1, 1], [1, 0, 0], [0, 1, 0]], bool)
    # three copies of the full row in distinct groups saturate gamma 1 after one pick
    r = solve_greedy_proposed(V, [1, 1, 1], cfg(3))
    assert r.selection.indices == [0]
    assert r.deficit_cost == 0 and r.status == OPTIMAL


def test_greedy_respects_groups():
    V = np.array([[1, 1], [1, 1]], bool)
    r = solve_greedy_proposed(V, [3, 3], cfg(2), groups=[0, 0])
    assert len(r.selection.indices) == 1


def test_greedy_binary_gamma_one_is_max_coverage():
    rng = np.random.default_rng(4)
    for _ in range(20):
        V = rng.random((10, 25)) < 0.3
        r = solve_greedy_binary(V, np.ones(25, int), cfg(4))
        covered = np.zeros(25, bool)
        expect = []
        for _ in range(4):
            gains = (V & ~covered).sum(axis=1)
            gains[expect] = -1
            i = int(np.argmax(gains))
            if gains[i] <= 0:
                break
            expect.append(i)
            covered |= V[i]
        assert r.selection.indices == sorted(expect)


def test_greedy_binary_fallback():
    V = np.array([[1, 1, 0], [0, 1, 1], [0, 0, 0]], bool)
    r = solve_greedy_binary(V, [3, 3, 3], cfg(2))
    assert r.selection.indices == [0, 1]
    assert r.status == HEURISTIC


def test_greedy_coverage_gap_non_increasing():
    rng = np.random.default_rng(9)
    V = rng.random((30, 60)) < 0.2
    r = solve_greedy_proposed(V, np.full(60, 3), cfg(10))
    assert all(a >= b for a, b in zip(r.trace, r.trace[1:]))


# -- exact search -------------------------------------------------------------------

def test_mip_matches_exhaustive():
    rng = np.random.default_rng(21)
    for _ in range(25):
        V, gamma, groups, budget = random_instance(rng)
        c = cfg(budget)
        a = solve_mip(build_mip(V, gamma, c, groups), c)
        b = enumerate_exact(V, gamma, c, groups)
        assert a.status == OPTIMAL
        assert a.objective == b.objective == a.deficit_cost
        assert a.best_bound == a.objective
        assert a.selection.respects_groups(groups) and len(a.selection.indices) <= budget


def test_ordering_on_random_instances_with_optimal_solver():
    rng = np.random.default_rng(22)
    for _ in range(25):
        V, gamma, groups, budget = random_instance(rng)
        c = cfg(budget)
        opt = solve_mip(build_mip(V, gamma, c, groups), c).deficit_cost
        assert opt <= solve_greedy_proposed(V, gamma, c, groups).deficit_cost
        assert opt <= solve_greedy_binary(V, gamma, c, groups).deficit_cost
        assert opt <= solve_zhao(V, gamma, c, groups).deficit_cost


def test_zhao_matches_binary_exhaustive():
    rng = np.random.default_rng(23)
    for _ in range(25):
        V, gamma, groups, budget = random_instance(rng)
        c = cfg(budget)
        a = solve_zhao(V, gamma, c, groups)
        b = enumerate_exact(V, gamma, c, groups, utility="binary")
        assert a.status == OPTIMAL and a.objective == b.objective and a.sense == "max"
        a1 = solve_zhao(V, np.ones_like(gamma), c, groups)
        b1 = enumerate_exact(V, np.ones_like(gamma), c, groups, utility="binary")
        assert a1.objective == b1.objective


def test_zhao_full_coverage_instance():
    V = np.array([[1, 1, 0], [0, 1, 1], [1, 0, 1], [0, 0, 0]], bool)
    gamma = [2, 2, 2]
    z = solve_zhao(V, gamma, cfg(3))
    p = solve(V, gamma, cfg(3, method="proposed-mip"))
    assert z.objective == 3 and p.objective == 0


def test_critique_instance():
    V, gamma, groups, budget = critique_instance()
    z = solve_zhao(V, gamma, cfg(budget), groups)
    p = solve(V, gamma, cfg(budget, method="proposed-mip"), groups)
    assert z.selection.indices == [0, 1, 2] and z.objective == 1 and z.deficit_cost == 27
    assert p.selection.indices == [3, 4, 5] and p.objective == 12


def test_saturating_budget_gives_zero():
    rng = np.random.default_rng(1)
    V = rng.random((6, 20)) < 0.6
    V[:3] = True
    r = solve(V, np.full(20, 3), cfg(6, method="proposed-mip"))
    assert r.objective == 0 and r.status == OPTIMAL


def test_time_limit_returns_incumbent():
    rng = np.random.default_rng(3)
    V = rng.random((400, 800)) < 0.05
    gamma = np.full(800, 3)
    r = solve(V, gamma, cfg(15, method="proposed-mip", time_budget=0.001))
    assert r.status == TIME_LIMIT
    assert len(r.selection.indices) <= 15
    assert r.best_bound <= r.objective
    assert r.deficit_cost == deficit_cost(V, r.selection.chosen, gamma)


def test_node_limit_is_deterministic_and_trace_monotone():
    rng = np.random.default_rng(5)
    V = rng.random((60, 150)) < 0.1
    gamma = rng.integers(1, 4, 150)
    groups = np.arange(60) // 3
    runs = [solve(V, gamma, cfg(6, method=m, node_limit=300), groups)
            for m in ("proposed-mip", "proposed-mip", "zhao-mip", "zhao-mip")]
    for a, b in (runs[:2], runs[2:]):
        assert a.selection.indices == b.selection.indices
        assert (a.objective, a.best_bound, a.nodes_explored, a.status) == \
            (b.objective, b.best_bound, b.nodes_explored, b.status)
        assert a.trace == b.trace
    for r in runs:
        inc = [t[1] for t in r.trace]
        bnd = [t[2] for t in r.trace]
        if r.sense == "min":
            assert inc == sorted(inc, reverse=True) and bnd == sorted(bnd)
            assert all(b <= i for i, b in zip(inc, bnd))
        else:
            assert inc == sorted(inc) and bnd == sorted(bnd, reverse=True)
            assert all(b >= i for i, b in zip(inc, bnd))
        assert r.selection.respects_groups(groups)


def test_exhaustive_examples():
    r = enumerate_exact(np.array([[1, 0]], bool), [1, 1], cfg(1))
    assert r.selection.indices == [0]
    r = enumerate_exact(np.array([[0, 0]], bool), [1, 1], cfg(1))
    assert r.selection.indices == [] and r.objective == 2
    r = enumerate_exact(np.zeros((4, 3), bool), [3, 2, 1], cfg(2))
    assert r.selection.indices == [] and r.objective == 14


def test_exhaustive_cap():
    assert count_selections([1, 1, 1], 2) == 1 + 3 + 3
    with pytest.raises(CapacityError):
        enumerate_exact(np.ones((40, 2), bool), [1, 1], cfg(10), cap=1000)


def test_config_validation():
    with pytest.raises(ConfigError):
        SolverConfig(budget=0)
    with pytest.raises(ConfigError):
        SolverConfig(budget=1, time_budget=0)
    with pytest.raises(ConfigError):
        SolverConfig(budget=1, method="nope")


def test_budget_above_group_count():
    V = np.eye(3, dtype=bool)
    r = solve(V, [1, 1, 1], cfg(10, method="proposed-mip"), groups=[0, 0, 1])
    assert len(r.selection.indices) == 2 and r.objective == 1
