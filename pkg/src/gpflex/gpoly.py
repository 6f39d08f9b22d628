"""Generalized polymatroids over the settlement horizon.

A flexibility set is carried as a pair of set functions (supermodular lower,
submodular upper) evaluated in kWh. A power profile u (kW) belongs to the set
iff ``lower(A) <= delta * u(A) <= upper(A)`` for every period subset A.

Linear optimization uses the greedy chain construction: periods sorted by
ascending cost, upper-bound marginals on the strictly negative positions and
complement lower-bound marginals on the rest. Box intersection produces new
evaluators whose every call is a submodular minimization (or supermodular
maximization) dispatched to the sfm module; results are memoized per set and
mask for the lifetime of the object.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import EvSpec, FeederSpec, TimeHorizon
from .setfn import (
    SUPERMODULAR,
    SUBMODULAR,
    SetFunction,
    device_lower,
    device_upper,
    modular_from_vector,
    negate_function,
    sum_functions,
)
from .sfm import SfmBackend, maximize_supermodular, solve_min


class GPolymatroidError(RuntimeError):
    pass


class InfeasibleIntersectionError(GPolymatroidError):
    """The flexibility set and the power box have no common point."""


@dataclass(frozen=True)
class OrderedSplit:
    """A permutation of the periods plus the index where the greedy marginal
    construction switches from upper-bound to lower-bound chains.

    Positions 1..split take upper marginals along prefixes of the order;
    positions split+1..T take lower marginals along complements.
    """

    order: tuple[int, ...]
    split: int

    def __post_init__(self):
        T = len(self.order)
        if sorted(self.order) != list(range(1, T + 1)):
            raise ValueError("order must be a permutation of 1..T")
        if not 0 <= self.split <= T:
            raise ValueError(f"split {self.split} outside 0..{T}")


class PowerBox:
    """Per-period lower/upper limits (kW) on the flexible power at a feeder."""

    def __init__(self, lower: Sequence[float], upper: Sequence[float]):
        self.lower = np.asarray(lower, dtype=np.float64).copy()
        self.upper = np.asarray(upper, dtype=np.float64).copy()
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise ValueError("box bounds must be 1-d arrays of equal length")
        if np.any(self.lower > self.upper):
            warnings.warn("power box has lower > upper in some periods; "
                          "any intersection with it is empty", stacklevel=2)

    @property
    def T(self) -> int:
        return len(self.lower)

    def is_consistent(self) -> bool:
        return bool(np.all(self.lower <= self.upper))

    def contains_profile(self, u: Sequence[float], tol: float = 1e-9) -> bool:
        u = np.asarray(u, dtype=np.float64)
        return bool(np.all(u >= self.lower - tol) and np.all(u <= self.upper + tol))

    def violation(self, u: Sequence[float]) -> float:
        u = np.asarray(u, dtype=np.float64)
        return float(max(np.max(self.lower - u, initial=0.0),
                         np.max(u - self.upper, initial=0.0)))


class GPolymatroid:
    """A (lower, upper) set-function pair with horizon metadata.

    ``provenance`` records how the object was built: "device", "sum", or
    "box_intersected(depth=k)". Box-intersected objects keep references to
    the inner set and the box, which gives membership tests a cheap
    decomposition (inner membership plus a pointwise box check) instead of
    nested minimization.
    """

    __slots__ = ("lower", "upper", "T", "delta", "provenance", "depth",
                 "_inner", "_box")

    def __init__(self, lower: SetFunction, upper: SetFunction, T: int,
                 delta: float, provenance: str = "device", depth: int = 0,
                 inner: "GPolymatroid | None" = None,
                 box: PowerBox | None = None):
        if lower.T != T or upper.T != T:
            raise ValueError("set-function horizons disagree with T")
        self.lower = lower
        self.upper = upper
        self.T = T
        self.delta = delta
        self.provenance = provenance
        self.depth = depth
        self._inner = inner
        self._box = box

    def p(self, mask: int) -> float:
        return self.lower(mask)

    def b(self, mask: int) -> float:
        return self.upper(mask)

    @property
    def supports_fast_membership(self) -> bool:
        if self._box is not None and self._inner is not None:
            return self._inner.supports_fast_membership
        return self.lower.has_fast_chain and self.upper.has_fast_chain

    def chain_values(self, side: str, order: Sequence[int]) -> np.ndarray:
        """Set-function values on nested prefixes of ``order`` (kWh)."""
        f = self.lower if side == "lower" else self.upper
        return f.prefix_values(order)


def from_device(ev: EvSpec, horizon: TimeHorizon) -> GPolymatroid:
    """The exact flexibility set of a single charging-only EV."""
    return GPolymatroid(device_lower(ev, horizon), device_upper(ev, horizon),
                        horizon.T, horizon.delta, provenance="device")


def zero_gpolymatroid(horizon: TimeHorizon) -> GPolymatroid:
    """The flexibility set of an empty population: only the zero profile."""
    zeros = modular_from_vector(np.zeros(horizon.T))
    return GPolymatroid(zeros, zeros, horizon.T, horizon.delta, provenance="sum")


def minkowski_sum(gs: Sequence[GPolymatroid]) -> GPolymatroid:
    """Aggregate flexibility of independent populations: sum both bounds."""
    gs = list(gs)
    if not gs:
        raise ValueError("need at least one summand")
    if len(gs) == 1:
        return gs[0]
    T, delta = gs[0].T, gs[0].delta
    for g in gs:
        if g.T != T or g.delta != delta:
            raise ValueError("summands must share the horizon")
    lower = sum_functions([g.lower for g in gs])
    upper = sum_functions([g.upper for g in gs])
    return GPolymatroid(lower, upper, T, delta, provenance="sum",
                        depth=max(g.depth for g in gs))


def contains(g: GPolymatroid, u: Sequence[float], tol: float = 1e-9,
             backend: SfmBackend | None = None) -> bool:
    """Membership test with absolute energy slack ``tol`` (kWh).

    For box-intersected sets, membership decomposes exactly into membership
    of the inner set plus the pointwise box check. Otherwise two submodular
    minimizations certify the lower and upper families of inequalities.
    """
    u = np.asarray(u, dtype=np.float64)
    if len(u) != g.T:
        raise ValueError(f"profile has {len(u)} periods, set has {g.T}")
    if g._box is not None and g._inner is not None:
        return (g._box.contains_profile(u, tol=tol / g.delta)
                and contains(g._inner, u, tol=tol, backend=backend))
    energy = modular_from_vector(g.delta * u)
    upper_slack = sum_functions([g.upper, negate_function(energy)])
    if solve_min(upper_slack, g.T, backend).value < -tol:
        return False
    lower_slack = sum_functions([energy, negate_function(g.lower)])
    if solve_min(lower_slack, g.T, backend).value < -tol:
        return False
    return True


@dataclass
class LinearOptResult:
    profile: np.ndarray
    objective: float
    split: OrderedSplit
    chain_evaluations: int


def _marginal_profile(g: GPolymatroid, order: Sequence[int], j: int) -> tuple[np.ndarray, int]:
    """Greedy marginal construction for a given order and switch index.

    Positions 1..j receive upper marginals b(S_k) - b(S_{k-1}) on prefixes;
    positions j+1..T receive lower marginals p(T\\S_{k-1}) - p(T\\S_k), read
    off the prefix chain of the reversed remaining order. Values are energies;
    the returned profile is in kW.
    """
    order = list(order)
    T = g.T
    y = np.zeros(T)
    evaluations = 1  # the empty set anchors both chains
    if j > 0:
        b_chain = g.chain_values("upper", order[:j])
        for k in range(j):
            y[order[k] - 1] = b_chain[k + 1] - b_chain[k]
        evaluations += j
    if j < T:
        rev = order[j:][::-1]  # prefixes of this order are the complements T\S_k
        p_chain = g.chain_values("lower", rev)
        for i, t in enumerate(rev):
            y[t - 1] = p_chain[i + 1] - p_chain[i]
        evaluations += T - j
    return y / g.delta, evaluations


def vertex_by_order(g: GPolymatroid, os: OrderedSplit) -> np.ndarray:
    """The vertex generated by an explicit order and switch index (kW)."""
    if len(os.order) != g.T:
        raise ValueError("order length disagrees with the horizon")
    profile, _ = _marginal_profile(g, os.order, os.split)
    return profile


def optimize_linear(g: GPolymatroid, c: Sequence[float],
                    verify: bool | None = None,
                    backend: SfmBackend | None = None,
                    tol: float = 1e-7) -> LinearOptResult:
    """Minimize the cost of a schedule over the set.

    ``c`` is a price per kWh for each period; the objective is the monetary
    cost ``sum_t c(t) * delta * u(t)``. Periods are sorted ascending by price
    (ties by period index, zero counts as nonnegative) and the minimizer is
    built from T+1 chain evaluations of the bounds.

    ``verify`` controls the membership check of the result: None verifies
    when the check is cheap (closed-form or box-decomposed evaluators), True
    forces it, False skips it. A failed check means the (lower, upper) pair
    does not describe a nonempty set and raises GPolymatroidError.
    """
    c = np.asarray(c, dtype=np.float64)
    if len(c) != g.T:
        raise ValueError(f"cost vector has {len(c)} periods, set has {g.T}")
    order = sorted(range(1, g.T + 1), key=lambda t: (c[t - 1], t))
    j = int(np.sum(c < 0.0))
    profile, evaluations = _marginal_profile(g, order, j)
    split = OrderedSplit(order=tuple(order), split=j)
    objective = float(c @ profile) * g.delta
    do_verify = verify if verify is not None else g.supports_fast_membership
    if do_verify and not contains(g, profile, tol=tol, backend=backend):
        raise GPolymatroidError(
            "greedy optimum fails membership: the bound pair is not compliant "
            "or the set is empty")
    return LinearOptResult(profile=profile, objective=objective, split=split,
                           chain_evaluations=evaluations)


def check_intersection_feasible(g: GPolymatroid, box: PowerBox,
                                backend: SfmBackend | None = None,
                                tol: float = 1e-9) -> bool:
    """True iff the set meets the box.

    Nonemptiness reduces to two bound checks: the box floor must stay below
    the upper function and the box ceiling above the lower function on every
    subset, each a single SFM instance.
    """
    if box.T != g.T:
        raise ValueError("box horizon disagrees with the set")
    if not box.is_consistent():
        return False
    floor_energy = modular_from_vector(g.delta * box.lower)
    ceil_energy = modular_from_vector(g.delta * box.upper)
    head = sum_functions([g.upper, negate_function(floor_energy)])
    if solve_min(head, g.T, backend).value < -tol:
        return False
    room = sum_functions([ceil_energy, negate_function(g.lower)])
    if solve_min(room, g.T, backend).value < -tol:
        return False
    return True


def intersect_box(g: GPolymatroid, box: PowerBox,
                  backend: SfmBackend | None = None) -> GPolymatroid:
    """Intersect a flexibility set with per-period power limits.

    The result is again a set of the same kind; its bounds are

        lower'(A) = max_X { lower(X) - ceil(X\\A) + floor(A\\X) }
        upper'(A) = min_X { upper(X) - floor(X\\A) + ceil(A\\X) }

    with floor/ceil the box bounds scaled to energy. Every evaluation solves
    one SFM instance (supermodular maximization for the lower bound); values
    are memoized per mask for the lifetime of the returned object.
    """
    if not check_intersection_feasible(g, box, backend):
        raise InfeasibleIntersectionError(
            "flexibility set and power box have no common profile")
    T, delta = g.T, g.delta
    floor = delta * box.lower
    ceil = delta * box.upper
    depth = g.depth + 1
    if depth > 2:
        warnings.warn(f"box intersection nested to depth {depth}: every outer "
                      "evaluation now triggers recursive SFM solves", stacklevel=2)
    bit_vectors = {}  # mask -> bool array of selected periods

    def in_set(mask: int) -> np.ndarray:
        arr = bit_vectors.get(mask)
        if arr is None:
            arr = (np.bitwise_and(mask >> np.arange(T), 1)).astype(bool)
            bit_vectors[mask] = arr
        return arr

    lower_memo: dict[int, float] = {}
    upper_memo: dict[int, float] = {}

    def new_lower(mask: int) -> float:
        val = lower_memo.get(mask)
        if val is None:
            sel = in_set(mask)
            weights = np.where(sel, -floor, -ceil)
            inner = sum_functions([g.lower, modular_from_vector(weights)])
            res = maximize_supermodular(inner, T, backend)
            val = res.value + float(floor[sel].sum())
            lower_memo[mask] = val
        return val

    def new_upper(mask: int) -> float:
        val = upper_memo.get(mask)
        if val is None:
            sel = in_set(mask)
            weights = np.where(sel, -ceil, -floor)
            inner = sum_functions([g.upper, modular_from_vector(weights)])
            res = solve_min(inner, T, backend)
            val = res.value + float(ceil[sel].sum())
            upper_memo[mask] = val
        return val

    lower_fn = SetFunction(T, new_lower, SUPERMODULAR)
    upper_fn = SetFunction(T, new_upper, SUBMODULAR)
    return GPolymatroid(lower_fn, upper_fn, T, delta,
                        provenance=f"box_intersected(depth={depth})",
                        depth=depth, inner=g, box=box)


def derive_box(feeder: FeederSpec, horizon: TimeHorizon) -> PowerBox:
    """Flexible-power limits left at a feeder once nominal load is netted out.

    Total flow is nominal plus flexible charging, so the charging headroom in
    period t is flow_max - nominal(t) and the charging floor is
    flow_min - nominal(t), clamped up to zero because charging cannot be
    negative. A negative headroom means the nominal load alone already
    violates the feeder limit; it is reported, not hidden.
    """
    u0 = np.asarray(feeder.nominal_load, dtype=np.float64)
    if len(u0) != horizon.T:
        raise ValueError(f"nominal load has {len(u0)} periods, horizon has {horizon.T}")
    upper = feeder.flow_max - u0
    if np.any(upper < 0):
        worst = int(np.argmax(-upper)) + 1
        warnings.warn(f"feeder {feeder.id}: nominal load exceeds flow_max in "
                      f"period {worst}; no feasible charging exists there",
                      stacklevel=2)
    lower = np.maximum(0.0, feeder.flow_min - u0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # crossing bounds already reported above
        return PowerBox(lower, upper)


def cross_inequality_holds(g: GPolymatroid, tol: float = 1e-9) -> bool:
    """Exhaustively verify the compliance condition making the set nonempty:
    upper(X) - lower(Y) >= upper(X\\Y) - lower(Y\\X) for all X, Y. Small
    horizons only."""
    if g.T > 12:
        raise ValueError("exhaustive compliance check limited to T <= 12")
    n = 1 << g.T
    b_vals = g.upper.value_table()
    p_vals = g.lower.value_table()
    masks = np.arange(n, dtype=np.int64)
    for x in range(n):
        xs = np.full(n, x, dtype=np.int64)
        lhs = b_vals[x] - p_vals[masks]
        rhs = b_vals[np.bitwise_and(xs, ~masks)] - p_vals[np.bitwise_and(masks, ~xs)]
        if np.any(lhs < rhs - tol):
            return False
    return True
