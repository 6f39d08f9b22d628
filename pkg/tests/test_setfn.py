import numpy as np
import pytest

from gpflex.model import TimeHorizon, sample_population
from gpflex.setfn import (
    check_curvature,
    device_lower,
    device_upper,
    full_mask,
    mask_from_periods,
    modular_from_vector,
    negate_function,
    periods_from_mask,
    sum_functions,
    SetFunction,
)
from gpflex.oracle import setfn_by_lp


def test_mask_helpers():
    assert mask_from_periods([1, 3]) == 0b101
    assert periods_from_mask(0b101) == [1, 3]
    assert full_mask(4) == 0b1111


class TestDeviceClosedForms:
    def test_lower_examples(self, h3, d1, d2):
        p1 = device_lower(d1, h3)
        assert p1(mask_from_periods([1, 2])) == pytest.approx(1.0)
        assert p1(0) == 0.0
        p2 = device_lower(d2, h3)
        assert p2(mask_from_periods([2])) == pytest.approx(1.0)

    def test_upper_examples(self, h3, d1, d2):
        b1 = device_upper(d1, h3)
        assert b1(mask_from_periods([1, 2])) == pytest.approx(4.0)
        assert b1(full_mask(3)) == pytest.approx(5.0)
        b2 = device_upper(d2, h3)
        assert b2(mask_from_periods([1])) == 0.0  # outside the window

    def test_full_horizon_pins_energy_bounds(self):
        h = TimeHorizon(7, 0.5)
        for ev in sample_population(3, 20, h):
            assert device_lower(ev, h)(full_mask(7)) == pytest.approx(ev.energy_min)
            assert device_upper(ev, h)(full_mask(7)) == pytest.approx(ev.energy_max)

    def test_lower_below_upper_everywhere(self):
        h = TimeHorizon(6)
        for ev in sample_population(4, 10, h):
            p, b = device_lower(ev, h), device_upper(ev, h)
            for mask in range(1 << 6):
                assert 0.0 <= p(mask) <= b(mask) + 1e-12

    def test_matches_lp_oracle(self):
        rng = np.random.default_rng(17)
        for k in range(20):
            T = int(rng.integers(2, 9))
            h = TimeHorizon(T, float(rng.choice([0.5, 1.0])))
            [ev] = sample_population(k, 1, h)
            p, b = device_lower(ev, h), device_upper(ev, h)
            for mask in range(1 << T):
                assert p(mask) == pytest.approx(setfn_by_lp([ev], h, mask, "lower"), abs=1e-8)
                assert b(mask) == pytest.approx(setfn_by_lp([ev], h, mask, "upper"), abs=1e-8)

    def test_equals_sorted_marginal_prefix_sums(self):
        # the closed forms are the prefix sums of the per-period marginal
        # vectors: ascending (zeros, remainder, full-rate) for the lower
        # bound, descending for the upper
        h = TimeHorizon(9, 1.0)
        for ev in sample_population(6, 25, h):
            cap = ev.max_rate * h.delta
            n = ev.window_length()
            for energy, builder in ((ev.energy_min, device_lower),
                                    (ev.energy_max, device_upper)):
                n_full = int(energy // cap)
                rem = energy - n_full * cap
                entries = [cap] * n_full + ([rem] if rem > 1e-12 else [])
                entries += [0.0] * (n - len(entries))
                ascending = builder is device_lower
                vec = sorted(entries) if ascending else sorted(entries, reverse=True)
                f = builder(ev, h)
                prefix = 0.0
                for k in range(n + 1):
                    window_prefix = mask_from_periods(
                        range(ev.arrival, ev.arrival + k))
                    assert f(window_prefix) == pytest.approx(prefix, abs=1e-9)
                    if k < n:
                        prefix += vec[k]

    def test_chain_and_table_agree_with_pointwise(self, d1):
        h = TimeHorizon(3)
        for f in (device_lower(d1, h), device_upper(d1, h)):
            table = f.value_table()
            assert table == pytest.approx([f(m) for m in range(8)])
            order = np.array([2, 1, 3])
            chain = f.prefix_values(order)
            assert chain[0] == 0.0
            assert chain[1] == pytest.approx(f(0b010))
            assert chain[2] == pytest.approx(f(0b011))
            assert chain[3] == pytest.approx(f(0b111))


class TestModular:
    def test_examples(self):
        f = modular_from_vector([1.0, 2.0])
        assert f(0b11) == pytest.approx(3.0)
        assert f(0) == 0.0
        g = modular_from_vector([-1.0, 4.0, 0.0])
        assert g(0b101) == pytest.approx(-1.0)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            modular_from_vector([1.0, np.inf])


class TestSums:
    def test_lower_sum_example(self, h3, d1, d2):
        f = sum_functions([device_lower(d1, h3), device_lower(d2, h3)])
        assert f(mask_from_periods([2, 3])) == pytest.approx(3.0)
        assert f.curvature == "supermodular"

    def test_upper_sum_example(self, h3, d1, d2):
        f = sum_functions([device_upper(d1, h3), device_upper(d2, h3)])
        assert f(full_mask(3)) == pytest.approx(7.0)
        assert f.curvature == "submodular"

    def test_sum_of_zeros(self):
        z = modular_from_vector([0.0, 0.0])
        f = sum_functions([z, z, z])
        assert all(f(m) == 0.0 for m in range(4))
        assert f.curvature == "modular"

    def test_horizon_mismatch(self):
        with pytest.raises(ValueError):
            sum_functions([modular_from_vector([1.0]), modular_from_vector([1.0, 2.0])])

    def test_mixed_curvature_unknown(self, h3, d1):
        f = sum_functions([device_lower(d1, h3), device_upper(d1, h3)])
        assert f.curvature == "unknown"


class TestCurvature:
    def test_device_functions_pass(self, h3, d1):
        rep = check_curvature(device_upper(d1, h3))
        assert rep.is_submodular and rep.matches_declared
        rep = check_curvature(device_lower(d1, h3))
        assert rep.is_supermodular and rep.matches_declared

    def test_modular_passes_both(self):
        rep = check_curvature(modular_from_vector([1.0, -2.0, 0.5]))
        assert rep.is_submodular and rep.is_supermodular and rep.is_modular

    def test_counterexample_slack(self):
        # f({1}) = f({2}) = 0 but f({1,2}) = 1 is strictly supermodular
        vals = {0b00: 0.0, 0b01: 0.0, 0b10: 0.0, 0b11: 1.0}
        f = SetFunction(2, lambda m: vals[m], curvature="submodular")
        rep = check_curvature(f)
        assert not rep.is_submodular
        assert not rep.matches_declared
        assert rep.submodular_slack == pytest.approx(-1.0)
        a, b = rep.submodular_worst
        assert (a | b) == 0b11 and (a & b) == 0b00

    def test_random_populations(self):
        rng = np.random.default_rng(23)
        for trial in range(50):
            T = int(rng.integers(2, 8))
            h = TimeHorizon(T)
            evs = sample_population(trial, int(rng.integers(1, 4)), h)
            lo = sum_functions([device_lower(ev, h) for ev in evs])
            hi = sum_functions([device_upper(ev, h) for ev in evs])
            assert check_curvature(lo).is_supermodular
            assert check_curvature(hi).is_submodular

    def test_larger_horizon_spotcheck(self):
        h = TimeHorizon(10)
        evs = sample_population(99, 3, h)
        hi = sum_functions([device_upper(ev, h) for ev in evs])
        assert check_curvature(hi).is_submodular


def test_negation_flips_curvature(h3, d1):
    f = negate_function(device_upper(d1, h3))
    assert f.curvature == "supermodular"
    assert f(0b111) == pytest.approx(-5.0)
    assert check_curvature(f).is_supermodular
