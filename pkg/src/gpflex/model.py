"""Domain types for EV charging scenarios: horizons, vehicles, feeders,
profiles, validation, and seeded population sampling.

Units: power in kW, energy in kWh, periods are 1-based indices into the
settlement horizon. Charging profiles are plain numpy arrays of length T
(kW per period); state-of-charge trajectories have length T+1 (kWh).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

# Absolute feasibility slack on every device inequality (kW / kWh). Profiles
# coming out of disaggregation are floating-point convex combinations.
EPS_FEAS = 1e-9


@dataclass(frozen=True)
class TimeHorizon:
    """Settlement horizon: T periods of ``delta`` hours each."""

    T: int
    delta: float = 1.0


@dataclass(frozen=True)
class EvSpec:
    """One EV's operational envelope.

    The vehicle is connected during periods ``arrival..departure`` inclusive,
    charges at up to ``max_rate`` kW while connected, and must leave with
    between ``energy_min`` and ``energy_max`` kWh on top of its initial state.
    """

    id: str
    feeder_id: str
    arrival: int
    departure: int
    max_rate: float
    energy_min: float
    energy_max: float

    def window_periods(self) -> range:
        return range(self.arrival, self.departure + 1)

    def window_length(self) -> int:
        return self.departure - self.arrival + 1

    def window_mask(self, T: int) -> int:
        lo = max(1, self.arrival)
        hi = min(T, self.departure)
        if hi < lo:
            return 0
        return ((1 << (hi - lo + 1)) - 1) << (lo - 1)

    def window_energy_cap(self, delta: float) -> float:
        """Max energy deliverable across the whole window (kWh)."""
        return self.max_rate * self.window_length() * delta


@dataclass(frozen=True)
class FeederSpec:
    """A feeder's power-flow limits and nominal (inflexible) load."""

    id: str
    flow_min: float
    flow_max: float
    nominal_load: tuple[float, ...]
    parent: str | None = None
    ev_ids: frozenset[str] = frozenset()


@dataclass(frozen=True)
class Scenario:
    horizon: TimeHorizon
    feeders: dict[str, FeederSpec]
    evs: dict[str, EvSpec]
    prices: tuple[float, ...]


@dataclass(frozen=True)
class Violation:
    entity: str
    rule: str
    message: str

    def __str__(self) -> str:
        return f"{self.entity}: [{self.rule}] {self.message}"


def _check_ev(ev: EvSpec, h: TimeHorizon, out: list[Violation]) -> None:
    name = f"ev {ev.id}"
    if not (1 <= ev.arrival and ev.departure <= h.T):
        out.append(Violation(name, "window_in_horizon",
                             f"window [{ev.arrival}, {ev.departure}] outside horizon 1..{h.T}"))
    if not ev.arrival < ev.departure:
        out.append(Violation(name, "arrival_before_departure",
                             f"arrival {ev.arrival} must precede departure {ev.departure}"))
        return
    if not ev.max_rate > 0:
        out.append(Violation(name, "positive_max_rate", f"max_rate {ev.max_rate} must be > 0"))
        return
    cap = ev.window_energy_cap(h.delta)
    if not 0 <= ev.energy_min:
        out.append(Violation(name, "energy_min_nonnegative", f"energy_min {ev.energy_min} < 0"))
    if not ev.energy_min <= ev.energy_max:
        out.append(Violation(name, "energy_bounds_ordered",
                             f"energy_min {ev.energy_min} exceeds energy_max {ev.energy_max}"))
    if ev.energy_min > cap + EPS_FEAS:
        out.append(Violation(name, "energy_min_within_capacity",
                             f"energy_min {ev.energy_min} exceeds max_rate*window*delta = {cap}"))
    if ev.energy_max > cap + EPS_FEAS:
        out.append(Violation(name, "energy_max_within_capacity",
                             f"energy_max {ev.energy_max} exceeds max_rate*window*delta = {cap}"))


def validate_scenario(s: Scenario) -> list[Violation]:
    """Collect every invariant violation in the scenario; empty means valid.

    Violations are data, not exceptions: malformed entities are reported,
    never raised.
    """
    out: list[Violation] = []
    h = s.horizon
    if h.T < 1:
        out.append(Violation("horizon", "positive_T", f"T={h.T} must be >= 1"))
    if not h.delta > 0:
        out.append(Violation("horizon", "positive_delta", f"delta={h.delta} must be > 0"))
    if len(s.prices) != h.T:
        out.append(Violation("scenario", "prices_length",
                             f"{len(s.prices)} prices for T={h.T} periods"))
    for ev in s.evs.values():
        _check_ev(ev, h, out)
        if ev.feeder_id not in s.feeders:
            out.append(Violation(f"ev {ev.id}", "feeder_resolves",
                                 f"unknown feeder {ev.feeder_id!r}"))
    for f in s.feeders.values():
        name = f"feeder {f.id}"
        if not f.flow_min <= f.flow_max:
            out.append(Violation(name, "flow_limits_ordered",
                                 f"flow_min {f.flow_min} exceeds flow_max {f.flow_max}"))
        if len(f.nominal_load) != h.T:
            out.append(Violation(name, "nominal_load_length",
                                 f"{len(f.nominal_load)} nominal-load entries for T={h.T}"))
        elif not all(math.isfinite(x) for x in f.nominal_load):
            out.append(Violation(name, "nominal_load_finite", "nominal load has non-finite entries"))
        if f.parent is not None and f.parent not in s.feeders:
            out.append(Violation(name, "parent_resolves", f"unknown parent {f.parent!r}"))
    # feeder graph must be a forest: walk each parent chain, flag any cycle
    for fid in s.feeders:
        seen = set()
        cur: str | None = fid
        while cur is not None and cur in s.feeders:
            if cur in seen:
                out.append(Violation(f"feeder {fid}", "forest_structure",
                                     f"cycle through feeder {cur!r}"))
                break
            seen.add(cur)
            cur = s.feeders[cur].parent
    return out


def soc_from_profile(u: Sequence[float], h: TimeHorizon) -> np.ndarray:
    """State of charge (kWh) after each period, starting from zero."""
    u = np.asarray(u, dtype=np.float64)
    if len(u) != h.T:
        raise ValueError(f"profile has {len(u)} periods, horizon has {h.T}")
    return np.concatenate([[0.0], np.cumsum(u) * h.delta])


def device_violation(u: Sequence[float], ev: EvSpec, h: TimeHorizon) -> float:
    """Largest constraint violation (kW or kWh) of a profile against an EV.

    Zero (up to rounding) for feasible profiles: nonnegative and rate-capped
    inside the connection window, zero outside, delivered energy within the
    departure bounds.
    """
    u = np.asarray(u, dtype=np.float64)
    if len(u) != h.T:
        raise ValueError(f"profile has {len(u)} periods, horizon has {h.T}")
    in_win = np.zeros(h.T, dtype=bool)
    in_win[ev.arrival - 1 : ev.departure] = True
    worst = 0.0
    if np.any(~in_win):
        worst = max(worst, float(np.max(np.abs(u[~in_win]), initial=0.0)))
    if np.any(in_win):
        worst = max(worst, float(np.max(-u[in_win], initial=0.0)))
        worst = max(worst, float(np.max(u[in_win] - ev.max_rate, initial=0.0)))
    energy = float(np.sum(u) * h.delta)
    worst = max(worst, ev.energy_min - energy, energy - ev.energy_max)
    return worst


def is_device_feasible(u: Sequence[float], ev: EvSpec, h: TimeHorizon,
                       eps: float = EPS_FEAS) -> bool:
    """True iff the profile satisfies all the EV's operational constraints
    within an absolute slack of ``eps`` on every inequality."""
    return device_violation(u, ev, h) <= eps


@dataclass(frozen=True)
class SamplerConfig:
    """Ranges for the seeded EV sampler.

    Arrival is uniform over the first ``arrival_max_frac`` of the horizon,
    departure uniform over the last ``1 - departure_min_frac``, the rate is
    drawn from ``rates``, the required energy is a uniform fraction of the
    window capacity, and the upper energy bound sits ``energy_headroom_frac``
    of capacity above it (capped at capacity).
    """

    arrival_max_frac: float = 1.0 / 3.0
    departure_min_frac: float = 2.0 / 3.0
    rates: tuple[float, ...] = (3.6, 7.2, 11.0)
    energy_min_frac: tuple[float, float] = (0.3, 0.9)
    energy_headroom_frac: float = 0.1

    def check(self, h: TimeHorizon) -> None:
        if h.T < 2:
            raise ValueError("sampling needs a horizon of at least 2 periods")
        if not 0 < self.arrival_max_frac <= 1 or not 0 <= self.departure_min_frac <= 1:
            raise ValueError("window fractions must lie in (0, 1]")
        if not self.rates or any(r <= 0 for r in self.rates):
            raise ValueError("rates must be positive")
        lo, hi = self.energy_min_frac
        if not 0 <= lo <= hi <= 1:
            raise ValueError(f"energy_min_frac range ({lo}, {hi}) must be ordered in [0, 1]")
        if self.energy_headroom_frac < 0:
            raise ValueError("energy_headroom_frac must be nonnegative")
        arrival_hi = max(1, int(h.T * self.arrival_max_frac))
        departure_lo = max(2, int(math.ceil(h.T * self.departure_min_frac)))
        if arrival_hi >= h.T or departure_lo > h.T:
            raise ValueError("arrival window must end before the departure window")


def sample_population(seed: int, n_per_feeder: int, h: TimeHorizon,
                      config: SamplerConfig | None = None,
                      feeder_id: str = "f1",
                      id_prefix: str | None = None) -> list[EvSpec]:
    """Draw a reproducible population of valid EVs for one feeder."""
    cfg = config or SamplerConfig()
    cfg.check(h)
    rng = np.random.default_rng(seed)
    prefix = id_prefix if id_prefix is not None else f"{feeder_id}-ev"
    arrival_hi = max(1, int(h.T * cfg.arrival_max_frac))
    departure_lo = max(2, int(math.ceil(h.T * cfg.departure_min_frac)))
    evs = []
    for k in range(n_per_feeder):
        arrival = int(rng.integers(1, arrival_hi + 1))
        departure = int(rng.integers(max(arrival + 1, departure_lo), h.T + 1))
        rate = float(rng.choice(cfg.rates))
        cap = rate * (departure - arrival + 1) * h.delta
        e_min = float(rng.uniform(*cfg.energy_min_frac)) * cap
        e_max = min(e_min + cfg.energy_headroom_frac * cap, cap)
        evs.append(EvSpec(id=f"{prefix}{k:03d}", feeder_id=feeder_id,
                          arrival=arrival, departure=departure, max_rate=rate,
                          energy_min=e_min, energy_max=e_max))
    return evs
