"""Acceptance suite: every criterion runs at its stated tolerance and prints
one pass/fail line (visible with -s or in the captured output on failure).

Run with:  pytest tests/test_acceptance.py -v -s
"""

import json
import time

import numpy as np
import pytest

from gpflex.cli import main
from gpflex.model import (
    TimeHorizon,
    is_device_feasible,
    sample_population,
)
from gpflex.gpoly import (
    OrderedSplit,
    PowerBox,
    contains,
    derive_box,
    from_device,
    intersect_box,
    minkowski_sum,
    optimize_linear,
    vertex_by_order,
)
from gpflex.setfn import device_lower, device_upper, modular_from_vector, sum_functions
from gpflex.sfm import minimize_exhaustive, minimize_min_norm
from gpflex.disagg import decompose, disaggregate_tree
from gpflex.network import FeederNode, aggregate_network, build_forest
from gpflex import oracle

from conftest import feasible_box_bounds, make_feeder, spread_profile


def _report(number: int, name: str, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE {'PASS' if ok else 'FAIL'}: criterion {number} "
          f"({name}): {detail}")
    assert ok, f"criterion {number} ({name}): {detail}"


def test_criterion_1_device_bounds_match_lp_oracle():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(100):
        T = int(rng.integers(2, 9))
        h = TimeHorizon(T, float(rng.choice([0.5, 1.0])))
        [ev] = sample_population(int(rng.integers(1 << 30)), 1, h)
        p, b = device_lower(ev, h), device_upper(ev, h)
        for mask in range(1 << T):
            worst = max(worst,
                        abs(p(mask) - oracle.setfn_by_lp([ev], h, mask, "lower")),
                        abs(b(mask) - oracle.setfn_by_lp([ev], h, mask, "upper")))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-7 and elapsed < 60.0
    _report(1, "device bounds vs LP", ok,
            f"100 EVs, all subsets, max err {worst:.2e}, {elapsed:.1f}s")


def _membership_samples(rng, G, evs, h, count=200):
    """Vertices, convex mixtures, certain outsiders, and uniform noise."""
    T = h.T
    total_cap = sum(ev.max_rate for ev in evs)
    out = []
    for k in range(count):
        order = tuple(rng.permutation(np.arange(1, T + 1)).tolist())
        split = OrderedSplit(order, int(rng.integers(0, T + 1)))
        v = vertex_by_order(G, split)
        kind = k % 4
        if kind == 0:
            out.append(v)
        elif kind == 1:
            w = vertex_by_order(
                G, OrderedSplit(tuple(rng.permutation(np.arange(1, T + 1)).tolist()),
                                int(rng.integers(0, T + 1))))
            lam = float(rng.uniform(0, 1))
            out.append(lam * v + (1 - lam) * w)
        elif kind == 2:
            u = v.copy()
            u[int(rng.integers(0, T))] = -0.5  # negative power: never feasible
            out.append(u)
        else:
            out.append(rng.uniform(-0.3, 1.2, T) * (total_cap + 0.5))
    return out


def test_criterion_2_minkowski_exactness():
    rng = np.random.default_rng(202)
    disagreements = 0
    profiles = 0
    for trial in range(50):
        T = int(rng.integers(2, 7))
        h = TimeHorizon(T)
        evs = sample_population(int(rng.integers(1 << 30)), int(rng.integers(1, 4)), h)
        G = minkowski_sum([from_device(ev, h) for ev in evs])
        for u in _membership_samples(rng, G, evs, h, count=200):
            got = contains(G, u, tol=1e-9)
            want = oracle.membership_by_lp(evs, h, u)
            disagreements += got != want
            profiles += 1
    _report(2, "Minkowski membership vs LP", disagreements == 0,
            f"{profiles} profiles over 50 populations, "
            f"{disagreements} disagreements")


def test_criterion_3_intersection_exactness():
    rng = np.random.default_rng(303)
    worst = 0.0
    disagreements = 0
    for trial in range(30):
        T = int(rng.integers(2, 7))
        h = TimeHorizon(T)
        evs = sample_population(int(rng.integers(1 << 30)), int(rng.integers(1, 4)), h)
        lo, hi = feasible_box_bounds(evs, h, rng)
        box = PowerBox(lo, hi)
        G = minkowski_sum([from_device(ev, h) for ev in evs])
        Gc = intersect_box(G, box)
        for mask in range(1 << T):
            worst = max(worst,
                        abs(Gc.p(mask) - oracle.setfn_by_lp(evs, h, mask, "lower", box=box)),
                        abs(Gc.b(mask) - oracle.setfn_by_lp(evs, h, mask, "upper", box=box)))
        for u in _membership_samples(rng, G, evs, h, count=50):
            got = contains(Gc, u, tol=1e-9)
            want = oracle.membership_by_lp(evs, h, u, box=box)
            disagreements += got != want
    ok = worst <= 1e-6 and disagreements == 0
    _report(3, "box intersection vs LP", ok,
            f"30 pairs, bound err {worst:.2e}, {disagreements} membership "
            "disagreements")


def test_criterion_4_greedy_optimality():
    rng = np.random.default_rng(404)
    worst = 0.0
    max_evals = 0
    runs = 0
    for trial in range(50):
        T = int(rng.integers(2, 7))
        h = TimeHorizon(T)
        evs = sample_population(int(rng.integers(1 << 30)), int(rng.integers(1, 4)), h)
        G = minkowski_sum([from_device(ev, h) for ev in evs])
        lo, hi = feasible_box_bounds(evs, h, rng)
        box = PowerBox(lo, hi)
        Gc = intersect_box(G, box)
        for g, use_box in ((G, False), (Gc, True)):
            c = rng.normal(0.0, 1.0, T)
            res = optimize_linear(g, c)
            expected, _ = oracle.linear_min_by_lp(evs, h, c, box=box if use_box else None)
            worst = max(worst, abs(res.objective - expected))
            max_evals = max(max_evals, res.chain_evaluations - (T + 1))
            runs += 1
    ok = worst <= 1e-7 and max_evals <= 0
    _report(4, "greedy vs LP", ok,
            f"{runs} cost vectors, max gap {worst:.2e}, "
            f"chain evaluations within T+1: {max_evals <= 0}")


def test_criterion_5_sfm_backend():
    rng = np.random.default_rng(505)
    worst = 0.0
    for _ in range(200):
        T = int(rng.integers(2, 13))
        h = TimeHorizon(T)
        evs = sample_population(int(rng.integers(1 << 30)), int(rng.integers(1, 4)), h)
        w = rng.normal(0.0, 3.0, T)
        f = sum_functions([device_upper(ev, h) for ev in evs]
                          + [modular_from_vector(-w)])
        exact = minimize_exhaustive(f)
        approx = minimize_min_norm(f)
        worst = max(worst, abs(exact.value - approx.value))
    _report(5, "min-norm vs exhaustive SFM", worst <= 1e-6,
            f"200 instances T<=12, max value gap {worst:.2e}")


def test_criterion_6_disaggregation_validity():
    rng = np.random.default_rng(606)
    worst_residual_rel = 0.0
    worst_violation = 0.0
    worst_box = 0.0
    max_entries_excess = 0
    for trial in range(30):
        T = int(rng.integers(4, 13))
        h = TimeHorizon(T)
        n_feeders = int(rng.integers(1, 3))
        nodes = []
        all_evs = []
        for jf in range(n_feeders):
            fid = f"f{jf + 1}"
            n_evs = int(rng.integers(1, 11 - 5 * (n_feeders - 1)))
            evs = sample_population(int(rng.integers(1 << 30)), n_evs, h, feeder_id=fid)
            nodes.append(FeederNode(make_feeder(fid, evs, h), evs))
            all_evs.extend(evs)
        G = aggregate_network(nodes, h)
        c = rng.normal(0.0, 1.0, T)
        res = optimize_linear(G, c)
        u_star = res.profile
        scale = 1.0 + float(np.linalg.norm(u_star))
        d = decompose(G, u_star, tol=1e-8)  # no hint: exercises the solver
        worst_residual_rel = max(worst_residual_rel, d.residual_norm / scale)
        max_entries_excess = max(max_entries_excess, len(d.entries) - (T + 1))
        r = disaggregate_tree(nodes, u_star, h, tol=1e-8, hint_splits=(res.split,))
        worst_residual_rel = max(worst_residual_rel, r.residual_norm / scale)
        worst_violation = max(worst_violation, r.max_device_violation)
        for ev in all_evs:
            assert is_device_feasible(r.per_device[ev.id], ev, h)
        for node in nodes:
            box = derive_box(node.spec, h)
            worst_box = max(worst_box, box.violation(r.per_feeder[node.id]))
    ok = (worst_residual_rel <= 1e-6 and worst_violation <= 1e-9
          and worst_box <= 1e-6 and max_entries_excess <= 0)
    _report(6, "end-to-end disaggregation", ok,
            f"30 runs, residual/scale {worst_residual_rel:.2e}, device violation "
            f"{worst_violation:.2e}, box violation {worst_box:.2e}, "
            f"entries within T+1: {max_entries_excess <= 0}")


@pytest.fixture(scope="module")
def case_study_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("casestudy_a")
    t0 = time.perf_counter()
    code = main(["casestudy", "--seed", "2025", "--out", str(out)])
    elapsed = time.perf_counter() - t0
    return out, code, elapsed


def test_criterion_7_case_study_scale(case_study_run):
    out, code, elapsed = case_study_run
    assert code == 0
    scenario = json.loads((out / "scenario.json").read_text())
    report = json.loads((out / "report.json").read_text())
    results = json.loads((out / "results.json").read_text())
    T = scenario["horizon"]["T"]
    assert T == 48
    assert len(report["per_feeder"]) == 2
    worst_box = 0.0
    for feeder in scenario["feeders"]:
        u = np.asarray(report["per_feeder"][feeder["id"]])
        upper = feeder["flow_max"] - np.asarray(feeder["nominal_load"])
        lower = np.maximum(0.0, feeder["flow_min"] - np.asarray(feeder["nominal_load"]))
        worst_box = max(worst_box,
                        float(np.max(u - upper, initial=0.0)),
                        float(np.max(lower - u, initial=0.0)))
    # naive charge-at-arrival cost recomputed from the emitted scenario
    prices = np.asarray(scenario["prices"])
    delta = scenario["horizon"]["delta"]
    naive_cost = 0.0
    for ev in scenario["evs"]:
        remaining = ev["energy_min"]
        for t in range(ev["arrival"], ev["departure"] + 1):
            if remaining <= 0:
                break
            draw = min(ev["max_rate"], remaining / delta)
            naive_cost += prices[t - 1] * draw * delta
            remaining -= draw * delta
    ok = (elapsed < 60.0 and worst_box <= 1e-6
          and results["objective"] <= naive_cost + 1e-9
          and report["feasible"])
    _report(7, "48-period case study", ok,
            f"{elapsed:.1f}s, box violation {worst_box:.2e}, cost "
            f"{results['objective']:.4g} <= naive {naive_cost:.4g}")


def test_criterion_8_determinism(case_study_run, tmp_path):
    out_a, code, _ = case_study_run
    assert code == 0
    out_b = tmp_path / "casestudy_b"
    assert main(["casestudy", "--seed", "2025", "--out", str(out_b)]) == 0
    deterministic = ("scenario.json", "results.json", "aggregate.csv",
                     "schedules.csv", "report.json", "plotdata_aggregate.csv",
                     "plotdata_devices.csv")
    differing = [name for name in deterministic
                 if (out_a / name).read_bytes() != (out_b / name).read_bytes()]
    _report(8, "byte-identical outputs", not differing,
            f"repeated seed-2025 runs, differing files: {differing or 'none'}")
