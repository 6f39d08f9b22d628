"""Command-line pipeline: validate scenarios, optimize day-ahead charging
cost over the network-constrained aggregate, and disaggregate the optimum
into per-EV schedules.

Scenario JSON schema::

    {
      "horizon": {"T": int, "delta": float},
      "prices": [float x T],
      "feeders": [{"id": str, "flow_min": float, "flow_max": float,
                   "nominal_load": [float x T], "parent": str | null}],
      "evs": [{"id": str, "feeder_id": str, "arrival": int, "departure": int,
               "max_rate": float, "energy_min": float, "energy_max": float}]
    }

Exit codes: 0 success, 1 scenario violations, 2 I/O or malformed input,
3 infeasible feeder intersection, 4 aggregate not in the flexibility set,
5 decomposition did not converge.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .model import (
    EvSpec,
    FeederSpec,
    Scenario,
    TimeHorizon,
    sample_population,
    validate_scenario,
)
from .gpoly import (
    InfeasibleIntersectionError,
    derive_box,
    from_device,
    minkowski_sum,
    contains,
    intersect_box,
    optimize_linear,
    OrderedSplit,
    PowerBox,
)
from .sfm import SfmBackend
from .network import NetworkStructureError, aggregate_node, aggregate_network, build_forest
from .disagg import (
    ConvergenceError,
    MembershipError,
    disaggregate_tree,
    split_vertex,
)
from . import oracle

log = logging.getLogger("gpflex")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_IO = 2
EXIT_INFEASIBLE = 3
EXIT_MEMBERSHIP = 4
EXIT_CONVERGENCE = 5


class ScenarioFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# scenario I/O

def scenario_to_dict(s: Scenario) -> dict:
    return {
        "horizon": {"T": s.horizon.T, "delta": s.horizon.delta},
        "prices": list(s.prices),
        "feeders": [
            {"id": f.id, "flow_min": f.flow_min, "flow_max": f.flow_max,
             "nominal_load": list(f.nominal_load), "parent": f.parent}
            for f in sorted(s.feeders.values(), key=lambda f: f.id)
        ],
        "evs": [
            {"id": e.id, "feeder_id": e.feeder_id, "arrival": e.arrival,
             "departure": e.departure, "max_rate": e.max_rate,
             "energy_min": e.energy_min, "energy_max": e.energy_max}
            for e in sorted(s.evs.values(), key=lambda e: e.id)
        ],
    }


def scenario_from_dict(d: dict) -> Scenario:
    """Structural parsing only; value-level problems are left for
    validate_scenario so they surface as violations, not exceptions."""
    try:
        horizon = TimeHorizon(T=int(d["horizon"]["T"]), delta=float(d["horizon"]["delta"]))
        prices = tuple(float(x) for x in d["prices"])
        evs = {}
        for e in d["evs"]:
            ev = EvSpec(id=str(e["id"]), feeder_id=str(e["feeder_id"]),
                        arrival=int(e["arrival"]), departure=int(e["departure"]),
                        max_rate=float(e["max_rate"]),
                        energy_min=float(e["energy_min"]),
                        energy_max=float(e["energy_max"]))
            if ev.id in evs:
                raise ScenarioFormatError(f"duplicate ev id {ev.id!r}")
            evs[ev.id] = ev
        feeders = {}
        for f in d["feeders"]:
            fid = str(f["id"])
            if fid in feeders:
                raise ScenarioFormatError(f"duplicate feeder id {fid!r}")
            member_ids = frozenset(e.id for e in evs.values() if e.feeder_id == fid)
            feeders[fid] = FeederSpec(
                id=fid, flow_min=float(f["flow_min"]), flow_max=float(f["flow_max"]),
                nominal_load=tuple(float(x) for x in f["nominal_load"]),
                parent=None if f.get("parent") is None else str(f["parent"]),
                ev_ids=member_ids)
    except ScenarioFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioFormatError(f"malformed scenario: {exc}") from exc
    return Scenario(horizon=horizon, feeders=feeders, evs=evs, prices=prices)


def canonical_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def load_scenario(path: str | Path) -> Scenario:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioFormatError(f"not valid JSON: {exc}") from exc
    return scenario_from_dict(data)


def save_scenario(s: Scenario, path: str | Path) -> None:
    Path(path).write_text(canonical_json(scenario_to_dict(s)))


def _write_long_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([x if isinstance(x, (str, int)) else f"{x:.9g}" for x in row])


# ---------------------------------------------------------------------------
# case-study synthesis

def synth_price_curve(T: int) -> np.ndarray:
    """Documented stand-in for a day-ahead price vector: morning and evening
    peaks with a midday valley, in currency per kWh."""
    hours = (np.arange(T) + 0.5) * 24.0 / T
    per_mwh = (50.0
               + 28.0 * np.exp(-((hours - 8.0) / 2.0) ** 2)
               + 38.0 * np.exp(-((hours - 19.0) / 2.5) ** 2)
               - 18.0 * np.exp(-((hours - 13.5) / 3.0) ** 2))
    return per_mwh / 1000.0


def _spread_profile(evs: list[EvSpec], h: TimeHorizon) -> np.ndarray:
    """Aggregate of each EV charging its minimum energy at a constant rate
    over its whole window; always a feasible interior-ish point."""
    out = np.zeros(h.T)
    for ev in evs:
        out[ev.arrival - 1 : ev.departure] += ev.energy_min / (ev.window_length() * h.delta)
    return out


def build_case_study_scenario(seed: int, n_feeders: int = 2,
                              evs_per_feeder: int = 10, T: int = 48,
                              delta: float = 1.0) -> Scenario:
    """Seeded scenario: sampled EV populations behind time-invariant feeder
    limits sized at 30% headroom over the constant-rate spread profile, which
    guarantees a nonempty constrained set while binding against synchronous
    charging."""
    h = TimeHorizon(T, delta)
    child_seeds = np.random.SeedSequence(seed).generate_state(max(1, n_feeders))
    feeders: dict[str, FeederSpec] = {}
    evs: dict[str, EvSpec] = {}
    for jf in range(n_feeders):
        fid = f"f{jf + 1}"
        population = sample_population(int(child_seeds[jf]), evs_per_feeder, h,
                                       feeder_id=fid)
        hours = (np.arange(T) + 0.5) * 24.0 / T
        nominal = (4.0 + jf) * (1.0 + 0.25 * np.sin(2.0 * np.pi * (hours - 7.0) / 24.0))
        spread = _spread_profile(population, h)
        cap = float(np.max(nominal)) + 1.3 * float(np.max(spread, initial=0.0)) + 1.0
        feeders[fid] = FeederSpec(id=fid, flow_min=0.0, flow_max=cap,
                                  nominal_load=tuple(float(x) for x in nominal),
                                  parent=None,
                                  ev_ids=frozenset(ev.id for ev in population))
        for ev in population:
            evs[ev.id] = ev
    return Scenario(horizon=h, feeders=feeders, evs=evs,
                    prices=tuple(float(x) for x in synth_price_curve(T)))


def naive_baseline(scenario: Scenario) -> tuple[float, np.ndarray]:
    """Charge-at-arrival reference: each EV draws max power from arrival
    until its minimum energy is met. Device-feasible but box- and
    price-blind."""
    h = scenario.horizon
    agg = np.zeros(h.T)
    prices = np.asarray(scenario.prices)
    cost = 0.0
    for ev in scenario.evs.values():
        remaining = ev.energy_min
        u = np.zeros(h.T)
        for t in ev.window_periods():
            if remaining <= 0:
                break
            draw = min(ev.max_rate, remaining / h.delta)
            u[t - 1] = draw
            remaining -= draw * h.delta
        agg += u
        cost += float(prices @ u) * h.delta
    return cost, agg


# ---------------------------------------------------------------------------
# oracle equivalence suites (for --oracle-check)

def run_oracle_checks(seed: int, T: int, n_evs: int,
                      delta: float = 1.0) -> list[tuple[str, bool, str]]:
    """Small-scale equivalence suites between the set-function machinery and
    the LP oracle. Returns (name, passed, detail) triples."""
    h = TimeHorizon(T, delta)
    rng = np.random.default_rng(seed)
    evs = sample_population(seed, n_evs, h)
    results = []

    gs = [from_device(ev, h) for ev in evs]
    G = minkowski_sum(gs) if len(gs) > 1 else gs[0]
    worst = 0.0
    for A in range(1 << T):
        worst = max(worst,
                    abs(G.p(A) - oracle.setfn_by_lp(evs, h, A, "lower")),
                    abs(G.b(A) - oracle.setfn_by_lp(evs, h, A, "upper")))
    results.append(("set-function bounds vs LP", worst <= 1e-7, f"max err {worst:.2e}"))

    spread = _spread_profile(evs, h)
    box = PowerBox(np.zeros(T), 1.3 * spread + 0.5)
    Gc = intersect_box(G, box)
    worst = 0.0
    for A in range(1 << T):
        worst = max(worst,
                    abs(Gc.p(A) - oracle.setfn_by_lp(evs, h, A, "lower", box=box)),
                    abs(Gc.b(A) - oracle.setfn_by_lp(evs, h, A, "upper", box=box)))
    results.append(("intersected bounds vs LP", worst <= 1e-6, f"max err {worst:.2e}"))

    disagreements = 0
    for _ in range(50):
        u = rng.uniform(-0.5, 1.5, T) * (spread + 0.5)
        if contains(G, u, tol=1e-9) != oracle.membership_by_lp(evs, h, u):
            disagreements += 1
        if contains(Gc, u, tol=1e-9) != oracle.membership_by_lp(evs, h, u, box=box):
            disagreements += 1
    results.append(("membership vs LP", disagreements == 0,
                    f"{disagreements} disagreements"))

    worst = 0.0
    for _ in range(20):
        c = rng.normal(0.0, 1.0, T)
        res = optimize_linear(G, c, verify=False)
        val, _ = oracle.linear_min_by_lp(evs, h, c)
        worst = max(worst, abs(res.objective - val))
        res = optimize_linear(Gc, c, verify=False)
        val, _ = oracle.linear_min_by_lp(evs, h, c, box=box)
        worst = max(worst, abs(res.objective - val))
    results.append(("greedy optimum vs LP", worst <= 1e-7, f"max gap {worst:.2e}"))
    return results


# ---------------------------------------------------------------------------
# pipeline helpers shared by optimize / disaggregate / casestudy

def _optimize_scenario(scenario: Scenario, backend: SfmBackend,
                       per_feeder: bool, parallel: bool):
    roots = build_forest(scenario)
    h = scenario.horizon
    log.info("aggregating %d feeder tree(s) over %d periods", len(roots), h.T)
    G = aggregate_network(roots, h, backend)
    res = optimize_linear(G, np.asarray(scenario.prices), backend=backend)
    log.info("greedy optimum: objective %.6g with %d chain evaluations",
             res.objective, res.chain_evaluations)
    feeder_profiles = {}
    if per_feeder and roots:
        parts = split_vertex([aggregate_node(n, h, backend) for n in roots],
                             res.split, parallel=parallel)
        feeder_profiles = {n.id: part for n, part in zip(roots, parts)}
    return roots, G, res, feeder_profiles


def _write_optimize_outputs(out_dir: Path, scenario: Scenario, res,
                            feeder_profiles: dict, timings: dict) -> None:
    h = scenario.horizon
    payload = {
        "objective": res.objective,
        "aggregate": [float(x) for x in res.profile],
        "split": {"order": list(res.split.order), "split": res.split.split},
        "chain_evaluations": res.chain_evaluations,
        "horizon": {"T": h.T, "delta": h.delta},
    }
    if feeder_profiles:
        payload["per_feeder"] = {fid: [float(x) for x in u]
                                 for fid, u in sorted(feeder_profiles.items())}
    (out_dir / "results.json").write_text(canonical_json(payload))
    rows = [("aggregate", t + 1, float(res.profile[t])) for t in range(h.T)]
    for fid, u in sorted(feeder_profiles.items()):
        rows.extend((fid, t + 1, float(u[t])) for t in range(h.T))
    _write_long_csv(out_dir / "aggregate.csv", ["entity_id", "period", "kw"], rows)
    (out_dir / "timing.json").write_text(canonical_json(timings))


def _write_disagg_outputs(out_dir: Path, scenario: Scenario, result,
                          feasible: bool, box_worst: float) -> None:
    h = scenario.horizon
    rows = []
    for ev_id in sorted(result.per_device):
        u = result.per_device[ev_id]
        rows.extend((ev_id, t + 1, float(u[t])) for t in range(h.T))
    _write_long_csv(out_dir / "schedules.csv", ["ev_id", "period", "kw"], rows)
    report = {
        "residual_norm": result.residual_norm,
        "max_device_violation": result.max_device_violation,
        "max_box_violation": box_worst,
        "feasible": feasible,
        "per_feeder": {fid: [float(x) for x in u]
                       for fid, u in sorted(result.per_feeder.items())},
    }
    (out_dir / "report.json").write_text(canonical_json(report))


def _check_boxes(scenario: Scenario, result, tol: float) -> tuple[bool, float]:
    worst = 0.0
    h = scenario.horizon
    for fid, target in result.per_feeder.items():
        box = derive_box(scenario.feeders[fid], h)
        worst = max(worst, box.violation(target))
    return worst <= tol, worst


# ---------------------------------------------------------------------------
# commands

def cmd_validate(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except (OSError, ScenarioFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    violations = validate_scenario(scenario)
    for v in violations:
        print(v)
    if violations:
        print(f"{len(violations)} violation(s)")
        return EXIT_INVALID
    print("scenario is valid")
    return EXIT_OK


def cmd_optimize(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except (OSError, ScenarioFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    violations = validate_scenario(scenario)
    if violations:
        for v in violations:
            print(v, file=sys.stderr)
        return EXIT_INVALID
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    backend = SfmBackend(threshold=args.exhaustive_threshold, tol=args.tol)
    t0 = time.perf_counter()
    try:
        roots, G, res, feeder_profiles = _optimize_scenario(
            scenario, backend, args.per_feeder, args.parallel)
    except (InfeasibleIntersectionError, NetworkStructureError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    elapsed = time.perf_counter() - t0
    _write_optimize_outputs(out_dir, scenario, res, feeder_profiles,
                            {"optimize_s": elapsed})
    print(f"objective: {res.objective:.9g}")
    print(f"wrote {out_dir / 'results.json'}")
    return EXIT_OK


def _load_aggregate(path: str | Path):
    with open(path) as fh:
        data = json.load(fh)
    if isinstance(data, list):
        return np.asarray(data, dtype=np.float64), ()
    profile = np.asarray(data["aggregate"], dtype=np.float64)
    hints = ()
    if "split" in data:
        hints = (OrderedSplit(order=tuple(int(t) for t in data["split"]["order"]),
                              split=int(data["split"]["split"])),)
    return profile, hints


def cmd_disaggregate(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
        u_star, hints = _load_aggregate(args.aggregate)
    except (OSError, ScenarioFormatError, json.JSONDecodeError, KeyError,
            TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    violations = validate_scenario(scenario)
    if violations:
        for v in violations:
            print(v, file=sys.stderr)
        return EXIT_INVALID
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    backend = SfmBackend(threshold=args.exhaustive_threshold)
    try:
        roots = build_forest(scenario)
        log.info("disaggregating over %d feeder tree(s)%s", len(roots),
                 " with a generating-split hint" if hints else "")
        result = disaggregate_tree(roots, u_star, scenario.horizon, tol=args.tol,
                                   hint_splits=hints, backend=backend,
                                   parallel=args.parallel)
    except InfeasibleIntersectionError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except MembershipError as exc:
        print(f"not disaggregatable: {exc}", file=sys.stderr)
        return EXIT_MEMBERSHIP
    except (ConvergenceError,) as exc:
        print(f"did not converge: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    box_tol = max(args.tol * (1.0 + float(np.linalg.norm(u_star))), 1e-9)
    boxes_ok, box_worst = _check_boxes(scenario, result, box_tol)
    devices_ok = result.max_device_violation <= 1e-7
    feasible = boxes_ok and devices_ok
    _write_disagg_outputs(out_dir, scenario, result, feasible, box_worst)
    print(f"schedules: {len(result.per_device)}, residual {result.residual_norm:.3e}, "
          f"worst device violation {result.max_device_violation:.3e}")
    return EXIT_OK if feasible else EXIT_MEMBERSHIP


def cmd_casestudy(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    scenario = build_case_study_scenario(args.seed, n_feeders=args.feeders,
                                         evs_per_feeder=args.evs,
                                         T=args.horizon, delta=args.delta)
    save_scenario(scenario, out_dir / "scenario.json")
    violations = validate_scenario(scenario)
    if violations:
        for v in violations:
            print(v, file=sys.stderr)
        return EXIT_INVALID
    h = scenario.horizon
    backend = SfmBackend(threshold=args.exhaustive_threshold, tol=args.tol)
    timings = {}

    if args.oracle_check:
        checks = run_oracle_checks(args.seed, min(args.horizon, 6), min(args.evs, 2),
                                   delta=args.delta)
        all_ok = True
        for name, ok, detail in checks:
            print(f"oracle-check {'PASS' if ok else 'FAIL'}: {name} ({detail})")
            all_ok &= ok
        if not all_ok:
            return EXIT_MEMBERSHIP

    t0 = time.perf_counter()
    try:
        roots, G, res, feeder_profiles = _optimize_scenario(
            scenario, backend, per_feeder=True, parallel=args.parallel)
    except InfeasibleIntersectionError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    timings["optimize_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    try:
        result = disaggregate_tree(roots, res.profile, h, tol=args.tol,
                                   hint_splits=(res.split,), backend=backend,
                                   parallel=args.parallel)
    except MembershipError as exc:
        print(f"not disaggregatable: {exc}", file=sys.stderr)
        return EXIT_MEMBERSHIP
    except ConvergenceError as exc:
        print(f"did not converge: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    timings["disaggregate_s"] = time.perf_counter() - t0

    _write_optimize_outputs(out_dir, scenario, res, feeder_profiles, timings)
    box_tol = max(args.tol * (1.0 + float(np.linalg.norm(res.profile))), 1e-9)
    boxes_ok, box_worst = _check_boxes(scenario, result, box_tol)
    devices_ok = result.max_device_violation <= 1e-7
    _write_disagg_outputs(out_dir, scenario, result, boxes_ok and devices_ok, box_worst)

    naive_cost, naive_agg = naive_baseline(scenario)
    prices = np.asarray(scenario.prices)
    rows = [("price", t + 1, float(prices[t])) for t in range(h.T)]
    rows += [("network", t + 1, float(res.profile[t])) for t in range(h.T)]
    rows += [("naive", t + 1, float(naive_agg[t])) for t in range(h.T)]
    for fid in sorted(result.per_feeder):
        box = derive_box(scenario.feeders[fid], h)
        u = result.per_feeder[fid]
        rows += [(fid, t + 1, float(u[t])) for t in range(h.T)]
        rows += [(f"{fid}:box_lower", t + 1, float(box.lower[t])) for t in range(h.T)]
        rows += [(f"{fid}:box_upper", t + 1, float(box.upper[t])) for t in range(h.T)]
    _write_long_csv(out_dir / "plotdata_aggregate.csv",
                    ["series", "period", "kw"], rows)
    dev_rows = []
    for ev_id in sorted(result.per_device):
        fid = scenario.evs[ev_id].feeder_id
        u = result.per_device[ev_id]
        dev_rows.extend((fid, ev_id, t + 1, float(u[t])) for t in range(h.T))
    _write_long_csv(out_dir / "plotdata_devices.csv",
                    ["feeder_id", "ev_id", "period", "kw"], dev_rows)

    print(f"optimized cost: {res.objective:.6g}  naive charge-at-arrival cost: "
          f"{naive_cost:.6g}")
    print(f"schedules: {len(result.per_device)}, residual {result.residual_norm:.3e}, "
          f"worst device violation {result.max_device_violation:.3e}, "
          f"worst box violation {box_worst:.3e}")
    if not (boxes_ok and devices_ok):
        return EXIT_MEMBERSHIP
    return EXIT_OK


# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tol", type=float, default=1e-8,
                   help="decomposition tolerance (relative)")
    p.add_argument("--exhaustive-threshold", type=int, default=16,
                   help="largest horizon solved by exhaustive SFM")
    p.add_argument("--parallel", action="store_true",
                   help="fan out independent per-feeder work to threads")
    p.add_argument("--out", default=".", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpflex",
        description="Aggregate EV charging flexibility under feeder limits: "
                    "exact representation, cost optimization, disaggregation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a scenario file")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("optimize", help="minimize day-ahead cost over the "
                                        "network-constrained aggregate")
    p.add_argument("scenario")
    p.add_argument("--per-feeder", action="store_true",
                   help="also emit per-feeder optimal profiles")
    _add_common(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("disaggregate", help="split an aggregate profile into "
                                            "per-EV schedules")
    p.add_argument("scenario")
    p.add_argument("aggregate", help="results.json from optimize, or a bare "
                                     "JSON array of kW values")
    _add_common(p)
    p.set_defaults(func=cmd_disaggregate)

    p = sub.add_parser("casestudy", help="synthesize a scenario, optimize, "
                                         "disaggregate, and emit plot data")
    p.add_argument("--seed", type=int, default=2025)
    p.add_argument("--feeders", type=int, default=2)
    p.add_argument("--evs", type=int, default=10, help="EVs per feeder")
    p.add_argument("--horizon", type=int, default=48)
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--oracle-check", action="store_true",
                   help="run LP-oracle equivalence suites first")
    _add_common(p)
    p.set_defaults(func=cmd_casestudy)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("GPFLEX_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
