"""Independent brute-force validators: a dense two-phase simplex and
device-level LP formulations of membership and subset energy bounds.

This module deliberately shares no algorithmic code with the set-function,
SFM, or decomposition machinery; it is the ground truth those are tested
against. Desk scale only: dense arithmetic, Bland's rule for anti-cycling,
no scaling heuristics.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import EvSpec, TimeHorizon

MAX_VARS = 240
_TOL = 1e-9


class OracleError(RuntimeError):
    pass


class OracleInfeasibleError(OracleError):
    pass


@dataclass
class LpResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None
    value: float | None


def _pivot(tab: np.ndarray, basis: np.ndarray, row: int, col: int) -> None:
    tab[row] /= tab[row, col]
    factors = tab[:, col].copy()
    factors[row] = 0.0
    tab -= np.outer(factors, tab[row])
    basis[row] = col


def _run_simplex(tab: np.ndarray, basis: np.ndarray, cost: np.ndarray,
                 max_pivots: int) -> str:
    """Minimize cost over the region encoded in the tableau, starting from the
    basic feasible solution in ``basis``. Bland's rule throughout."""
    m, ncols = tab.shape
    n = ncols - 1
    for _ in range(max_pivots):
        red = cost[:n] - cost[basis] @ tab[:, :n]
        candidates = np.flatnonzero(red < -_TOL)
        if len(candidates) == 0:
            return "optimal"
        enter = int(candidates[0])
        col = tab[:, enter]
        rows = np.flatnonzero(col > _TOL)
        if len(rows) == 0:
            return "unbounded"
        ratios = tab[rows, -1] / col[rows]
        best = np.min(ratios)
        ties = rows[ratios <= best + 1e-12]
        leave = int(ties[np.argmin(basis[ties])])
        _pivot(tab, basis, leave, enter)
    raise OracleError("simplex exceeded its pivot budget")


def lp_solve_dense(c: Sequence[float],
                   a_ub: np.ndarray | None = None, b_ub: Sequence[float] | None = None,
                   a_eq: np.ndarray | None = None, b_eq: Sequence[float] | None = None,
                   lb: Sequence[float] | None = None,
                   ub: Sequence[float] | None = None) -> LpResult:
    """Minimize c.x subject to a_ub x <= b_ub, a_eq x = b_eq, lb <= x <= ub.

    Lower bounds must be finite (defaults to 0); upper bounds may be +inf.
    Two phases, dense tableau, Bland's rule; accurate to ~1e-9 at desk scale.
    """
    c = np.asarray(c, dtype=np.float64)
    n = len(c)
    if n > MAX_VARS:
        raise OracleError(f"{n} variables exceeds the oracle's size limit {MAX_VARS}")
    lb = np.zeros(n) if lb is None else np.asarray(lb, dtype=np.float64)
    ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=np.float64)
    if not np.all(np.isfinite(lb)):
        raise OracleError("oracle requires finite lower bounds")
    if np.any(ub < lb - _TOL):
        return LpResult("infeasible", None, None)

    rows = []
    rhs = []
    if a_ub is not None:
        a_ub = np.atleast_2d(np.asarray(a_ub, dtype=np.float64))
        b_ub = np.asarray(b_ub, dtype=np.float64)
        for i in range(a_ub.shape[0]):
            rows.append(a_ub[i])
            rhs.append(b_ub[i] - a_ub[i] @ lb)
    finite_ub = np.flatnonzero(np.isfinite(ub))
    for i in finite_ub:
        row = np.zeros(n)
        row[i] = 1.0
        rows.append(row)
        rhs.append(ub[i] - lb[i])
    n_ub = len(rows)
    n_eq = 0
    if a_eq is not None:
        a_eq = np.atleast_2d(np.asarray(a_eq, dtype=np.float64))
        b_eq = np.asarray(b_eq, dtype=np.float64)
        n_eq = a_eq.shape[0]
        for i in range(n_eq):
            rows.append(a_eq[i])
            rhs.append(b_eq[i] - a_eq[i] @ lb)
    m = len(rows)
    if m == 0:
        # bounds-only problem: minimize coordinatewise
        x = np.where(c >= 0, lb, np.where(np.isfinite(ub), ub, np.nan))
        if np.any(np.isnan(x)):
            return LpResult("unbounded", None, None)
        return LpResult("optimal", x, float(c @ x))

    A = np.vstack(rows)
    b = np.asarray(rhs, dtype=np.float64)
    # slacks for the inequality block
    S = np.zeros((m, n_ub))
    S[:n_ub, :] = np.eye(n_ub)
    # normalize rhs >= 0 (flips slack signs where needed)
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0
    S[neg] *= -1.0
    # artificials wherever the slack cannot seed the basis
    needs_art = np.ones(m, dtype=bool)
    basis = np.full(m, -1, dtype=np.int64)
    for i in range(n_ub):
        if S[i, i] > 0.5:
            needs_art[i] = False
            basis[i] = n + i
    art_rows = np.flatnonzero(needs_art)
    n_art = len(art_rows)
    total = n + n_ub + n_art
    tab = np.zeros((m, total + 1))
    tab[:, :n] = A
    tab[:, n:n + n_ub] = S
    for k, r in enumerate(art_rows):
        tab[r, n + n_ub + k] = 1.0
        basis[r] = n + n_ub + k
    tab[:, -1] = b

    max_pivots = 2000 + 200 * (m + total)
    if n_art > 0:
        phase1 = np.zeros(total)
        phase1[n + n_ub:] = 1.0
        status = _run_simplex(tab, basis, phase1, max_pivots)
        if status != "optimal" or float(phase1[basis] @ tab[:, -1]) > 1e-7:
            return LpResult("infeasible", None, None)
        # pivot remaining artificials out; rows that cannot pivot are redundant
        keep_rows = np.ones(m, dtype=bool)
        for r in range(m):
            if basis[r] >= n + n_ub:
                pivot_col = -1
                for jcol in range(n + n_ub):
                    if abs(tab[r, jcol]) > 1e-9:
                        pivot_col = jcol
                        break
                if pivot_col >= 0:
                    _pivot(tab, basis, r, pivot_col)
                else:
                    keep_rows[r] = False
        if not keep_rows.all():
            tab = tab[keep_rows]
            basis = basis[keep_rows]
            m = tab.shape[0]
        tab = np.delete(tab, np.s_[n + n_ub:total], axis=1)
        total = n + n_ub

    phase2 = np.zeros(total)
    phase2[:n] = c
    status = _run_simplex(tab, basis, phase2, max_pivots)
    if status == "unbounded":
        return LpResult("unbounded", None, None)
    z = np.zeros(total)
    z[basis] = tab[:, -1]
    x = lb + z[:n]
    return LpResult("optimal", x, float(c @ x))


def _box_bounds(box) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(box, tuple):
        lo, hi = box
    else:
        lo, hi = box.lower, box.upper
    return np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)


def _device_blocks(evs: Sequence[EvSpec], h: TimeHorizon):
    """Per-device variable bounds and energy rows for the stacked LP with one
    variable per (device, period)."""
    T = h.T
    n = len(evs) * T
    lb = np.zeros(n)
    ub = np.zeros(n)
    rows = []
    rhs = []
    for i, ev in enumerate(evs):
        base = i * T
        for t in ev.window_periods():
            ub[base + t - 1] = ev.max_rate
        row = np.zeros(n)
        row[base:base + T] = h.delta
        rows.append(row)
        rhs.append(ev.energy_max)
        rows.append(-row)
        rhs.append(-ev.energy_min)
    return lb, ub, rows, rhs


def membership_by_lp(evs: Sequence[EvSpec], h: TimeHorizon, u: Sequence[float],
                     box=None, eq_tol: float = 1e-7) -> bool:
    """Can the aggregate profile u be split into feasible per-device profiles
    (optionally also respecting the box)? Feasibility LP with one variable per
    device and period; the aggregate match is enforced within ``eq_tol`` kW."""
    u = np.asarray(u, dtype=np.float64)
    T = h.T
    if len(u) != T:
        raise ValueError("profile length disagrees with the horizon")
    if box is not None:
        lo, hi = _box_bounds(box)
        if np.any(u < lo - eq_tol) or np.any(u > hi + eq_tol):
            return False
    if not evs:
        return bool(np.all(np.abs(u) <= eq_tol))
    lb, ub, rows, rhs = _device_blocks(evs, h)
    n = len(lb)
    for t in range(T):
        row = np.zeros(n)
        row[t::T] = 1.0
        rows.append(row)
        rhs.append(u[t] + eq_tol)
        rows.append(-row)
        rhs.append(-(u[t] - eq_tol))
    res = lp_solve_dense(np.zeros(n), a_ub=np.vstack(rows), b_ub=np.array(rhs),
                         lb=lb, ub=ub)
    return res.status == "optimal"


def setfn_by_lp(evs: Sequence[EvSpec], h: TimeHorizon, subset_mask: int,
                side: str, box=None) -> float:
    """Exact lower or upper bound (kWh) on the aggregate energy consumed
    during the masked periods, over the (optionally box-constrained)
    aggregate flexibility set. Ground truth for the closed-form and
    intersected set functions."""
    if side not in ("lower", "upper"):
        raise ValueError(f"side must be 'lower' or 'upper', got {side!r}")
    T = h.T
    if not evs:
        if box is not None:
            lo, hi = _box_bounds(box)
            if np.any(lo > 1e-12) or np.any(hi < -1e-12):
                raise OracleInfeasibleError("empty population cannot meet the box")
        return 0.0
    lb, ub, rows, rhs = _device_blocks(evs, h)
    n = len(lb)
    if box is not None:
        lo, hi = _box_bounds(box)
        for t in range(T):
            row = np.zeros(n)
            row[t::T] = 1.0
            rows.append(row)
            rhs.append(hi[t])
            rows.append(-row)
            rhs.append(-lo[t])
    c = np.zeros(n)
    for t in range(T):
        if (subset_mask >> t) & 1:
            c[t::T] = h.delta
    sign = 1.0 if side == "lower" else -1.0
    res = lp_solve_dense(sign * c, a_ub=np.vstack(rows), b_ub=np.array(rhs),
                         lb=lb, ub=ub)
    if res.status != "optimal":
        raise OracleInfeasibleError(f"aggregate set is {res.status}")
    return sign * res.value


def linear_min_by_lp(evs: Sequence[EvSpec], h: TimeHorizon, c: Sequence[float],
                     box=None) -> tuple[float, np.ndarray]:
    """Minimum schedule cost sum_t c(t)*delta*u(t) over the (optionally
    box-constrained) aggregate set, with the optimal aggregate profile."""
    c = np.asarray(c, dtype=np.float64)
    T = h.T
    if not evs:
        return 0.0, np.zeros(T)
    lb, ub, rows, rhs = _device_blocks(evs, h)
    n = len(lb)
    if box is not None:
        lo, hi = _box_bounds(box)
        for t in range(T):
            row = np.zeros(n)
            row[t::T] = 1.0
            rows.append(row)
            rhs.append(hi[t])
            rows.append(-row)
            rhs.append(-lo[t])
    obj = np.zeros(n)
    for t in range(T):
        obj[t::T] = c[t] * h.delta
    res = lp_solve_dense(obj, a_ub=np.vstack(rows), b_ub=np.array(rhs), lb=lb, ub=ub)
    if res.status != "optimal":
        raise OracleInfeasibleError(f"aggregate set is {res.status}")
    agg = res.x.reshape(len(evs), T).sum(axis=0)
    return float(res.value), agg
