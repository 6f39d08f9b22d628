"""Disaggregation of aggregate charging profiles into per-EV schedules.

The pipeline: express the target aggregate as a convex combination of
vertices of the aggregate flexibility set (fully-corrective Frank-Wolfe on
the squared distance, with the greedy linear optimizer as the vertex oracle
and an explicit active set reprojected each iteration), prune the
combination to at most T+1 vertices, then replay each vertex's generating
order on every Minkowski summand. Marginals of a sum are sums of marginals,
so the per-summand vertices add up to the aggregate vertex exactly, and each
device receives a convex combination of vertices of its own feasibility set,
which is feasible by convexity.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import nnls

from .model import EvSpec, TimeHorizon, device_violation
from .gpoly import (
    GPolymatroid,
    OrderedSplit,
    contains,
    derive_box,
    from_device,
    minkowski_sum,
    optimize_linear,
    vertex_by_order,
)
from .sfm import SfmBackend

DEFAULT_TOL = 1e-8
WEIGHT_FLOOR = 1e-14


class DisaggregationError(RuntimeError):
    pass


class MembershipError(DisaggregationError):
    """The target profile is not in the flexibility set."""


class ConvergenceError(DisaggregationError):
    """Frank-Wolfe ran out of iterations with the residual above tolerance."""


@dataclass(frozen=True)
class DecompositionEntry:
    weight: float
    split: OrderedSplit
    vertex: np.ndarray


@dataclass
class VertexDecomposition:
    """Convex combination of vertices reconstructing a target profile.

    Each entry keeps the order/split that generated its vertex, so the same
    vertex can be re-derived on any Minkowski summand.
    """

    entries: list[DecompositionEntry]
    target: np.ndarray
    residual_norm: float
    flags: tuple[str, ...] = ()

    def reconstruction(self) -> np.ndarray:
        out = np.zeros_like(self.target)
        for e in self.entries:
            out += e.weight * e.vertex
        return out

    def weights(self) -> np.ndarray:
        return np.array([e.weight for e in self.entries])


@dataclass
class DisaggregationResult:
    per_device: dict[str, np.ndarray]
    achieved_aggregate: np.ndarray
    max_device_violation: float
    per_feeder: dict[str, np.ndarray] = field(default_factory=dict)
    residual_norm: float = 0.0


def _should_check_membership(g: GPolymatroid, backend: SfmBackend | None) -> bool:
    # Nested SFM membership tests are prohibitive on long horizons; there the
    # Frank-Wolfe gap itself certifies membership (see decompose).
    threshold = (backend or SfmBackend()).threshold
    return g.supports_fast_membership or g.T <= threshold


def _project_to_hull(vertices: list[np.ndarray], target: np.ndarray) -> np.ndarray:
    """Simplex weights minimizing the distance from the convex hull of the
    vertices to the target: nonnegative least squares on the system augmented
    with a heavily weighted row pinning the weight sum to one."""
    V = np.stack(vertices, axis=1)
    rho = 1e3 * max(1.0, float(np.abs(V).max()), float(np.linalg.norm(target)))
    A = np.vstack([V, np.full((1, V.shape[1]), rho)])
    b = np.concatenate([target, [rho]])
    w, _ = nnls(A, b)
    total = float(w.sum())
    if total <= 0.0:
        w = np.zeros(len(vertices))
        w[0] = 1.0
        return w
    return w / total


def decompose(g: GPolymatroid, u_star: Sequence[float], tol: float = DEFAULT_TOL,
              max_iter: int | None = None,
              hint_splits: Iterable[OrderedSplit] = (),
              check_membership: bool | None = None,
              backend: SfmBackend | None = None) -> VertexDecomposition:
    """Express ``u_star`` as a convex combination of at most T+1 vertices.

    Fully-corrective Frank-Wolfe on 0.5*||x - u_star||^2: each iteration asks
    the greedy linear optimizer for the vertex most aligned against the
    residual, then reprojects the target onto the convex hull of the active
    set. Terminates once the active vertices span a face containing the
    target; stops at residual <= tol*(1 + ||u_star||). ``hint_splits`` seed
    the active set; when a hint already reproduces the target (the target is
    a known vertex) no iterations run at all.

    Raises MembershipError when the target is certifiably outside the set
    (the Frank-Wolfe gap vanishes at a positive residual) and
    ConvergenceError when the iteration budget runs out first.
    """
    u_star = np.asarray(u_star, dtype=np.float64)
    T = g.T
    if len(u_star) != T:
        raise ValueError(f"target has {len(u_star)} periods, set has {T}")
    if max_iter is None:
        max_iter = 500 * T
    eff_tol = tol * (1.0 + float(np.linalg.norm(u_star)))
    do_check = (check_membership if check_membership is not None
                else _should_check_membership(g, backend))
    if do_check and not contains(g, u_star, tol=max(1e-7, eff_tol * g.delta),
                                 backend=backend):
        raise MembershipError("target profile is not in the flexibility set")

    splits: list[OrderedSplit] = []
    vertices: list[np.ndarray] = []
    known: set[OrderedSplit] = set()
    for split in hint_splits:
        if split not in known:
            known.add(split)
            splits.append(split)
            vertices.append(vertex_by_order(g, split))
    if not splits:
        res = optimize_linear(g, -u_star, verify=False, backend=backend)
        known.add(res.split)
        splits.append(res.split)
        vertices.append(res.profile)

    weights = _project_to_hull(vertices, u_star)
    x = np.stack(vertices, axis=1) @ weights
    iterations = 0
    stalls = 0
    while True:
        resid = x - u_star
        rnorm = float(np.linalg.norm(resid))
        if rnorm <= eff_tol:
            break
        if iterations >= max_iter:
            raise ConvergenceError(
                f"residual {rnorm:.3e} above tolerance {eff_tol:.3e} "
                f"after {max_iter} iterations")
        iterations += 1
        lp = optimize_linear(g, resid, verify=False, backend=backend)
        gap = float(resid @ (x - lp.profile))
        # For a member the gap stays above half the squared residual, so a
        # vanished gap at a clearly positive residual certifies
        # non-membership; the margins keep rounding noise from misfiring.
        if gap < 0.25 * eff_tol * eff_tol and rnorm > 2.0 * eff_tol:
            raise MembershipError(
                "target profile is not in the flexibility set "
                f"(Frank-Wolfe gap vanished at residual {rnorm:.3e})")
        if lp.split not in known:
            known.add(lp.split)
            splits.append(lp.split)
            vertices.append(lp.profile)
            stalls = 0
        else:
            stalls += 1
            if stalls > 20:
                raise ConvergenceError(
                    f"no progress at residual {rnorm:.3e}: the vertex oracle "
                    "keeps returning held vertices")
        weights = _project_to_hull(vertices, u_star)
        keep = weights > WEIGHT_FLOOR
        if not keep.all():
            splits = [s for s, k in zip(splits, keep) if k]
            vertices = [v for v, k in zip(vertices, keep) if k]
            known = set(splits)
            weights = weights[keep] / float(weights[keep].sum())
        x = np.stack(vertices, axis=1) @ weights

    entries = [DecompositionEntry(weight=float(w), split=s, vertex=v)
               for s, v, w in zip(splits, vertices, weights) if w > WEIGHT_FLOOR]
    recon = np.zeros(T)
    for e in entries:
        recon += e.weight * e.vertex
    d = VertexDecomposition(entries=entries, target=u_star,
                            residual_norm=float(np.linalg.norm(recon - u_star)))
    if len(d.entries) > T + 1:
        d = reduce_caratheodory(d)
    return d


def reduce_caratheodory(d: VertexDecomposition) -> VertexDecomposition:
    """Prune a convex combination to at most T+1 vertices.

    Repeatedly finds an affine dependency among the active vertices (null
    vector of the stacked homogeneous system) and shifts weight along it
    until one weight hits zero; the reconstruction is unchanged. A singular
    dependency system stops the reduction and flags the result.
    """
    T = len(d.target)
    entries = [e for e in d.entries if e.weight > WEIGHT_FLOOR]
    flags = list(d.flags)
    while len(entries) > T + 1:
        V = np.stack([e.vertex for e in entries], axis=1)  # T x K
        M = np.vstack([V, np.ones((1, len(entries)))])
        _, _, vh = np.linalg.svd(M)
        mu = vh[-1]
        scale = max(1.0, float(np.max(np.abs(M))))
        if float(np.linalg.norm(M @ mu)) > 1e-8 * scale:
            flags.append("caratheodory_singular")
            break
        if np.max(mu) <= 0:
            mu = -mu
        lam = np.array([e.weight for e in entries])
        pos = mu > 1e-14
        theta = float(np.min(lam[pos] / mu[pos]))
        lam = lam - theta * mu
        lam = np.clip(lam, 0.0, None)
        keep = lam > WEIGHT_FLOOR
        total = float(lam[keep].sum())
        entries = [DecompositionEntry(weight=float(w) / total, split=e.split,
                                      vertex=e.vertex)
                   for e, w, k in zip(entries, lam, keep) if k]
    recon = np.zeros(T)
    for e in entries:
        recon += e.weight * e.vertex
    return VertexDecomposition(entries=entries, target=d.target,
                               residual_norm=float(np.linalg.norm(recon - d.target)),
                               flags=tuple(flags))


def split_vertex(summands: Sequence[GPolymatroid], split: OrderedSplit,
                 parallel: bool = False) -> list[np.ndarray]:
    """Replay a vertex's generating order on each Minkowski summand.

    The per-summand vertices sum to the aggregate vertex exactly because the
    chain marginals of a sum are the sums of the chain marginals.
    """
    if parallel and len(summands) > 1:
        with ThreadPoolExecutor() as pool:
            return list(pool.map(lambda g: vertex_by_order(g, split), summands))
    return [vertex_by_order(g, split) for g in summands]


def _combine_splits(summands: Sequence[GPolymatroid],
                    decomposition: VertexDecomposition,
                    parallel: bool = False) -> list[np.ndarray]:
    """Per-summand convex combinations implied by a vertex decomposition."""
    T = len(decomposition.target)
    totals = [np.zeros(T) for _ in summands]
    for e in decomposition.entries:
        parts = split_vertex(summands, e.split, parallel=parallel)
        for acc, part in zip(totals, parts):
            acc += e.weight * part
    return totals


def disaggregate(population: Sequence[EvSpec], u_star: Sequence[float],
                 horizon: TimeHorizon, tol: float = DEFAULT_TOL,
                 max_iter: int | None = None,
                 hint_splits: Iterable[OrderedSplit] = (),
                 parallel: bool = False) -> DisaggregationResult:
    """Split an aggregate profile across a population of EVs.

    The target must lie in the population's aggregate flexibility set. Every
    returned schedule is feasible for its EV (a convex combination of
    vertices of the EV's own set) and the schedules sum to the reconstructed
    aggregate exactly.
    """
    u_star = np.asarray(u_star, dtype=np.float64)
    population = list(population)
    if not population:
        if float(np.max(np.abs(u_star), initial=0.0)) > tol:
            raise MembershipError("nonzero aggregate with no devices")
        return DisaggregationResult(per_device={}, achieved_aggregate=np.zeros(horizon.T),
                                    max_device_violation=0.0,
                                    residual_norm=float(np.linalg.norm(u_star)))
    summands = [from_device(ev, horizon) for ev in population]
    g = minkowski_sum(summands) if len(summands) > 1 else summands[0]
    d = decompose(g, u_star, tol=tol, max_iter=max_iter, hint_splits=hint_splits)
    shares = _combine_splits(summands, d, parallel=parallel)
    per_device = {ev.id: share for ev, share in zip(population, shares)}
    achieved = np.zeros(horizon.T)
    for share in shares:
        achieved += share
    worst = max(device_violation(per_device[ev.id], ev, horizon) for ev in population)
    return DisaggregationResult(per_device=per_device, achieved_aggregate=achieved,
                                max_device_violation=worst,
                                residual_norm=float(np.linalg.norm(achieved - u_star)))


def disaggregate_tree(nodes, u_star: Sequence[float], horizon: TimeHorizon,
                      tol: float = DEFAULT_TOL, max_iter: int | None = None,
                      hint_splits: Iterable[OrderedSplit] = (),
                      backend: SfmBackend | None = None,
                      parallel: bool = False) -> DisaggregationResult:
    """Disaggregate across a feeder forest, respecting every feeder box.

    The target is decomposed over the sum of the constrained per-feeder sets;
    each vertex splits across feeders by order replay on the constrained
    evaluators, so the recombined per-feeder targets stay inside their boxes.
    Device-level splitting then runs inside each feeder against the
    unconstrained device sum, recursing for deeper trees.
    """
    from .network import FeederNode, aggregate_node  # local import, no cycle

    if isinstance(nodes, FeederNode):
        nodes = [nodes]
    nodes = list(nodes)
    u_star = np.asarray(u_star, dtype=np.float64)
    if not nodes:
        if float(np.max(np.abs(u_star), initial=0.0)) > tol:
            raise MembershipError("nonzero aggregate with no feeders")
        return DisaggregationResult(per_device={}, achieved_aggregate=np.zeros(horizon.T),
                                    max_device_violation=0.0)

    constrained = [aggregate_node(n, horizon, backend=backend) for n in nodes]
    g = minkowski_sum(constrained) if len(constrained) > 1 else constrained[0]
    d = decompose(g, u_star, tol=tol, max_iter=max_iter,
                  hint_splits=hint_splits, backend=backend)
    feeder_targets = _combine_splits(constrained, d, parallel=parallel)

    per_device: dict[str, np.ndarray] = {}
    per_feeder: dict[str, np.ndarray] = {}
    worst_violation = 0.0
    box_tol = max(tol * (1.0 + float(np.linalg.norm(u_star))), 1e-9)
    for node, target in zip(nodes, feeder_targets):
        per_feeder[node.id] = target
        box = derive_box(node.spec, horizon)
        excess = box.violation(target)
        if excess > box_tol:
            raise DisaggregationError(
                f"feeder {node.id}: reconstructed aggregate violates its box "
                f"by {excess:.3e} kW")
        inner = _disaggregate_within(node, target, horizon, tol,
                                     max_iter, backend, parallel)
        overlap = set(per_device) & set(inner.per_device)
        if overlap:
            raise DisaggregationError(f"duplicate EV ids across feeders: {sorted(overlap)}")
        per_device.update(inner.per_device)
        worst_violation = max(worst_violation, inner.max_device_violation)

    achieved = np.zeros(horizon.T)
    for share in per_device.values():
        achieved += share
    return DisaggregationResult(per_device=per_device, achieved_aggregate=achieved,
                                max_device_violation=worst_violation,
                                per_feeder=per_feeder,
                                residual_norm=float(np.linalg.norm(achieved - u_star)))


def _disaggregate_within(node, target: np.ndarray,
                         horizon: TimeHorizon, tol: float, max_iter: int | None,
                         backend: SfmBackend | None,
                         parallel: bool) -> DisaggregationResult:
    """Split a feeder-level target over local devices and child subtrees."""
    from .network import aggregate_node

    if not node.evs and not node.children:
        if float(np.max(np.abs(target), initial=0.0)) > max(tol, 1e-9):
            raise MembershipError(f"feeder {node.id}: nonzero target with no devices")
        return DisaggregationResult(per_device={}, achieved_aggregate=np.zeros(horizon.T),
                                    max_device_violation=0.0)
    device_summands = [from_device(ev, horizon) for ev in node.evs]
    child_summands = [aggregate_node(child, horizon, backend=backend)
                      for child in node.children]
    summands = device_summands + child_summands
    g = minkowski_sum(summands) if len(summands) > 1 else summands[0]
    d = decompose(g, target, tol=tol, max_iter=max_iter, backend=backend)
    shares = _combine_splits(summands, d, parallel=parallel)

    per_device: dict[str, np.ndarray] = {}
    worst = 0.0
    for ev, share in zip(node.evs, shares[: len(node.evs)]):
        per_device[ev.id] = share
        worst = max(worst, device_violation(share, ev, horizon))
    for child, child_target in zip(node.children, shares[len(node.evs):]):
        child_box = derive_box(child.spec, horizon)
        excess = child_box.violation(child_target)
        if excess > max(tol * (1.0 + float(np.linalg.norm(child_target))), 1e-9):
            raise DisaggregationError(
                f"feeder {child.id}: child target violates its box by {excess:.3e} kW")
        sub = _disaggregate_within(child, child_target, horizon, tol,
                                   max_iter, backend, parallel)
        per_device.update(sub.per_device)
        worst = max(worst, sub.max_device_violation)
    achieved = np.zeros(horizon.T)
    for share in per_device.values():
        achieved += share
    return DisaggregationResult(per_device=per_device, achieved_aggregate=achieved,
                                max_device_violation=worst,
                                residual_norm=float(np.linalg.norm(achieved - target)))
