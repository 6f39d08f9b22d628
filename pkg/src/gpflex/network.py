"""Feeder trees: assemble device sets into network-constrained aggregates.

Each node's constrained flexibility set is the box intersection of the
Minkowski sum of its local devices and its children's constrained sets; the
network aggregate is the sum over the forest roots. Aggregation results are
cached per node keyed by the subtree's content.
"""

from __future__ import annotations

import warnings

from .model import EvSpec, FeederSpec, Scenario, TimeHorizon
from .gpoly import (
    GPolymatroid,
    InfeasibleIntersectionError,
    derive_box,
    from_device,
    intersect_box,
    minkowski_sum,
    zero_gpolymatroid,
)
from .sfm import SfmBackend


class NetworkStructureError(ValueError):
    pass


class FeederNode:
    """One feeder with its local EVs and child feeders."""

    def __init__(self, spec: FeederSpec, evs: list[EvSpec] | None = None,
                 children: list["FeederNode"] | None = None):
        self.spec = spec
        self.evs = list(evs or [])
        self.children = list(children or [])
        self._cache: dict = {}

    @property
    def id(self) -> str:
        return self.spec.id

    def invalidate_cache(self) -> None:
        self._cache.clear()
        for child in self.children:
            child.invalidate_cache()

    def content_key(self) -> tuple:
        return (self.spec.id, self.spec.flow_min, self.spec.flow_max,
                tuple(self.spec.nominal_load),
                tuple((ev.id, ev.arrival, ev.departure, ev.max_rate,
                       ev.energy_min, ev.energy_max) for ev in self.evs),
                tuple(child.content_key() for child in self.children))


def build_forest(scenario: Scenario) -> list[FeederNode]:
    """Feeder nodes linked into trees, with EVs attached; roots sorted by id."""
    nodes = {fid: FeederNode(spec) for fid, spec in scenario.feeders.items()}
    for ev in scenario.evs.values():
        if ev.feeder_id not in nodes:
            raise NetworkStructureError(f"ev {ev.id}: unknown feeder {ev.feeder_id!r}")
        nodes[ev.feeder_id].evs.append(ev)
    for node in nodes.values():
        node.evs.sort(key=lambda e: e.id)
    roots = []
    for fid, spec in scenario.feeders.items():
        if spec.parent is None:
            roots.append(nodes[fid])
        elif spec.parent in nodes:
            nodes[spec.parent].children.append(nodes[fid])
        else:
            raise NetworkStructureError(f"feeder {fid}: unknown parent {spec.parent!r}")
    for node in nodes.values():
        node.children.sort(key=lambda n: n.id)
    reachable = set()

    def walk(n: FeederNode):
        if n.id in reachable:
            raise NetworkStructureError(f"feeder graph is not a forest at {n.id!r}")
        reachable.add(n.id)
        for child in n.children:
            walk(child)

    for root in roots:
        walk(root)
    if len(reachable) != len(nodes):
        raise NetworkStructureError("feeder graph contains a cycle")
    return sorted(roots, key=lambda n: n.id)


def aggregate_node(node: FeederNode, horizon: TimeHorizon,
                   backend: SfmBackend | None = None) -> GPolymatroid:
    """Constrained aggregate flexibility of a subtree.

    Recursively sums local device sets with child aggregates and intersects
    with the node's power box. A node with nothing below it contributes only
    the zero profile; its box must still admit zero.
    """
    be = backend or SfmBackend()
    key = (node.content_key(), horizon.T, horizon.delta, be.threshold, be.mode)
    cached = node._cache.get(key)
    if cached is not None:
        return cached
    box = derive_box(node.spec, horizon)
    summands = [from_device(ev, horizon) for ev in node.evs]
    summands += [aggregate_node(child, horizon, backend) for child in node.children]
    if not summands:
        if not box.contains_profile([0.0] * horizon.T):
            raise InfeasibleIntersectionError(
                f"feeder {node.id}: empty population cannot satisfy the box")
        result = zero_gpolymatroid(horizon)
    else:
        inner = minkowski_sum(summands) if len(summands) > 1 else summands[0]
        try:
            result = intersect_box(inner, box, backend)
        except InfeasibleIntersectionError as exc:
            raise InfeasibleIntersectionError(f"feeder {node.id}: {exc}") from exc
    node._cache[key] = result
    return result


def aggregate_network(nodes: list[FeederNode], horizon: TimeHorizon,
                      backend: SfmBackend | None = None) -> GPolymatroid:
    """Network-wide constrained aggregate: the sum over the forest roots."""
    if not nodes:
        warnings.warn("aggregating an empty forest: only the zero profile", stacklevel=2)
        return zero_gpolymatroid(horizon)
    parts = [aggregate_node(n, horizon, backend) for n in nodes]
    return minkowski_sum(parts) if len(parts) > 1 else parts[0]
