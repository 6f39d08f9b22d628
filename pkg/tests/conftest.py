import numpy as np
import pytest

from gpflex.model import EvSpec, FeederSpec, TimeHorizon, sample_population


@pytest.fixture
def h3():
    return TimeHorizon(3, 1.0)


@pytest.fixture
def d1():
    # window {1,2,3}, 2 kW, must deliver 3..5 kWh
    return EvSpec("d1", "f1", 1, 3, 2.0, 3.0, 5.0)


@pytest.fixture
def d2():
    # window {2,3}, 1 kW, exactly 2 kWh: the set is the single point (0,1,1)
    return EvSpec("d2", "f1", 2, 3, 1.0, 2.0, 2.0)


def spread_profile(evs, h):
    """Each EV charging its minimum at constant rate: a feasible aggregate."""
    out = np.zeros(h.T)
    for ev in evs:
        out[ev.arrival - 1 : ev.departure] += ev.energy_min / (ev.window_length() * h.delta)
    return out


def random_population(seed, n, h, feeder_id="f1"):
    return sample_population(seed, n, h, feeder_id=feeder_id)


def feasible_box_bounds(evs, h, rng, slack=1.3):
    """A box guaranteed to meet the population's aggregate set: it contains
    the constant-rate spread profile with headroom."""
    spread = spread_profile(evs, h)
    upper = slack * spread + float(rng.uniform(0.2, 1.0))
    return np.zeros(h.T), upper


def make_feeder(fid, evs, h, cap=None, nominal=None, parent=None):
    nominal = tuple([0.0] * h.T) if nominal is None else tuple(nominal)
    if cap is None:
        spread = spread_profile(evs, h)
        cap = float(1.3 * spread.max() + 1.0) + max(nominal)
    return FeederSpec(fid, 0.0, cap, nominal, parent=parent,
                      ev_ids=frozenset(e.id for e in evs))
