"""The LP oracle is the ground truth for everything else, so it gets its own
independent check: full vertex enumeration on small random systems."""

import itertools

import numpy as np
import pytest

from gpflex.model import EvSpec, TimeHorizon
from gpflex.oracle import (
    OracleError,
    OracleInfeasibleError,
    lp_solve_dense,
    linear_min_by_lp,
    membership_by_lp,
    setfn_by_lp,
)


def test_trivial_feasible():
    res = lp_solve_dense([0.0], a_ub=[[1.0]], b_ub=[5.0])
    assert res.status == "optimal"
    assert res.value == pytest.approx(0.0)


def test_infeasible_interval():
    # x >= 1 and x <= 0
    res = lp_solve_dense([0.0], a_ub=[[-1.0]], b_ub=[-1.0], ub=[0.0])
    assert res.status == "infeasible"


def test_unbounded():
    res = lp_solve_dense([-1.0, -1.0], a_ub=[[1.0, -1.0]], b_ub=[1.0])
    assert res.status == "unbounded"


def test_bounds_only_problem():
    res = lp_solve_dense([2.0, -3.0], lb=[1.0, 0.0], ub=[4.0, 2.0])
    assert res.status == "optimal"
    assert res.x == pytest.approx([1.0, 2.0])
    assert res.value == pytest.approx(2.0 - 6.0)


def test_equality_rows():
    # x + y = 2, minimize x
    res = lp_solve_dense([1.0, 0.0], a_eq=[[1.0, 1.0]], b_eq=[2.0], ub=[10.0, 1.5])
    assert res.status == "optimal"
    assert res.x == pytest.approx([0.5, 1.5])


def _enumerate_vertices(c, A, b, lo, hi):
    """Brute-force optimum: intersect every n-subset of the constraint rows
    (inequalities plus both bounds), keep feasible points, take the best."""
    n = len(c)
    rows = [np.asarray(r, dtype=float) for r in A]
    rhs = list(b)
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        rows.append(e.copy())
        rhs.append(hi[i])
        rows.append(-e)
        rhs.append(-lo[i])
    rows = np.array(rows)
    rhs = np.array(rhs)
    best = None
    for combo in itertools.combinations(range(len(rows)), n):
        M = rows[list(combo)]
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, rhs[list(combo)])
        if np.all(rows @ x <= rhs + 1e-8):
            val = float(c @ x)
            if best is None or val < best:
                best = val
    return best


def test_simplex_matches_vertex_enumeration():
    rng = np.random.default_rng(42)
    checked = 0
    for _ in range(50):
        n = int(rng.integers(2, 5))
        m = int(rng.integers(1, 4))
        c = rng.normal(0, 1, n)
        A = rng.normal(0, 1, (m, n))
        lo = np.zeros(n)
        hi = rng.uniform(0.5, 3.0, n)
        # keep a margin point feasible so the system is never empty
        mid = hi / 2
        b = A @ mid + rng.uniform(0.1, 2.0, m)
        expected = _enumerate_vertices(c, A, b, lo, hi)
        res = lp_solve_dense(c, a_ub=A, b_ub=b, lb=lo, ub=hi)
        assert res.status == "optimal"
        assert res.value == pytest.approx(expected, abs=1e-7)
        checked += 1
    assert checked == 50


def test_size_guard():
    with pytest.raises(OracleError):
        lp_solve_dense(np.zeros(500))


def test_membership_examples(h3, d1, d2):
    # (2,3,2) splits into (2,2,1) + (0,1,1)
    assert membership_by_lp([d1, d2], h3, [2.0, 3.0, 2.0])
    # d2 alone admits only (0,1,1)
    assert not membership_by_lp([d2], h3, [1.0, 1.0, 0.0])
    # charging-only populations reject negative aggregates
    assert not membership_by_lp([d1, d2], h3, [-0.5, 2.0, 2.0])


def test_membership_empty_population(h3):
    assert membership_by_lp([], h3, [0.0, 0.0, 0.0])
    assert not membership_by_lp([], h3, [0.0, 1.0, 0.0])


def test_setfn_examples(h3, d1):
    assert setfn_by_lp([d1], h3, 0b011, "lower") == pytest.approx(1.0)
    assert setfn_by_lp([d1], h3, 0b000, "lower") == pytest.approx(0.0)
    assert setfn_by_lp([d1], h3, 0b000, "upper") == pytest.approx(0.0)
    assert setfn_by_lp([d1], h3, 0b011, "upper") == pytest.approx(4.0)
    assert setfn_by_lp([d1], h3, 0b111, "upper") == pytest.approx(5.0)


def test_setfn_with_tight_box():
    # single point (1,1): every subset bound is pinned
    h = TimeHorizon(2, 1.0)
    ev = EvSpec("e", "f", 1, 2, 1.0, 2.0, 2.0)
    box = (np.zeros(2), np.ones(2))
    assert setfn_by_lp([ev], h, 0b01, "upper", box=box) == pytest.approx(1.0)
    assert setfn_by_lp([ev], h, 0b01, "lower", box=box) == pytest.approx(1.0)
    assert setfn_by_lp([ev], h, 0b11, "upper", box=box) == pytest.approx(2.0)


def test_setfn_infeasible_set():
    h = TimeHorizon(2, 1.0)
    ev = EvSpec("e", "f", 1, 2, 1.0, 2.0, 2.0)
    box = (np.zeros(2), np.full(2, 0.5))  # max deliverable 1 < required 2
    with pytest.raises(OracleInfeasibleError):
        setfn_by_lp([ev], h, 0b01, "upper", box=box)


def test_linear_min_example(h3, d1):
    value, agg = linear_min_by_lp([d1], h3, [1.0, -1.0, 2.0])
    assert value == pytest.approx(-1.0)
    assert agg == pytest.approx([1.0, 2.0, 0.0])


def test_delta_scaling():
    # halving the period length doubles the power needed for the same energy
    h = TimeHorizon(2, 0.5)
    ev = EvSpec("e", "f", 1, 2, 4.0, 3.0, 3.0)
    assert setfn_by_lp([ev], h, 0b11, "upper") == pytest.approx(3.0)
    assert setfn_by_lp([ev], h, 0b01, "upper") == pytest.approx(2.0)  # 4 kW * 0.5 h
