"""Set functions on subsets of the settlement horizon.

Subsets of the periods {1..T} are packed bitmasks: bit t-1 selects period t.
Python ints are arbitrary precision, so masks work at any horizon length;
the vectorized fast paths (full value tables, prefix chains) are what make
exhaustive enumeration and greedy subroutines cheap at small T.

All set functions here return energy in kWh and are normalized to 0 at the
empty set.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .model import EvSpec, TimeHorizon

SUBMODULAR = "submodular"
SUPERMODULAR = "supermodular"
MODULAR = "modular"
UNKNOWN = "unknown"

# Full value tables are 2^T floats; keep enumeration within desk scale.
MAX_ENUMERATION_T = 22


def full_mask(T: int) -> int:
    return (1 << T) - 1


def mask_from_periods(periods: Iterable[int]) -> int:
    """Bitmask of 1-based period indices."""
    mask = 0
    for t in periods:
        mask |= 1 << (t - 1)
    return mask


def periods_from_mask(mask: int) -> list[int]:
    out = []
    t = 1
    while mask:
        if mask & 1:
            out.append(t)
        mask >>= 1
        t += 1
    return out


def popcount(mask: int) -> int:
    return mask.bit_count()


class SetFunction:
    """Real-valued function on subsets of {1..T} with f(empty) = 0.

    ``curvature`` is the tag declared by the constructor (submodular,
    supermodular, modular or unknown), not a verified property; use
    :func:`check_curvature` to verify on small horizons.

    Optional fast paths:
      * ``chain_fn(order)`` evaluates the function on all nested prefixes of
        an ordering of periods in one vectorized pass.
      * ``table_fn()`` evaluates the function on all ``2^T`` subsets at once.
    Both default to per-mask evaluation loops when absent.
    """

    __slots__ = ("T", "curvature", "_fn", "_chain_fn", "_table_fn")

    def __init__(
        self,
        T: int,
        fn: Callable[[int], float],
        curvature: str = UNKNOWN,
        chain_fn: Callable[[np.ndarray], np.ndarray] | None = None,
        table_fn: Callable[[], np.ndarray] | None = None,
    ):
        if T < 1:
            raise ValueError(f"horizon must have at least one period, got T={T}")
        self.T = T
        self.curvature = curvature
        self._fn = fn
        self._chain_fn = chain_fn
        self._table_fn = table_fn

    def __call__(self, mask: int) -> float:
        return self._fn(mask)

    @property
    def has_fast_chain(self) -> bool:
        return self._chain_fn is not None

    def prefix_values(self, order: Sequence[int]) -> np.ndarray:
        """Values on the nested prefixes of ``order`` (1-based periods).

        Returns an array of length ``len(order) + 1`` whose k-th entry is the
        value on the first k periods of the order; entry 0 is f(empty) = 0.
        """
        idx = np.asarray(order, dtype=np.int64)
        if self._chain_fn is not None:
            return self._chain_fn(idx)
        out = np.empty(len(idx) + 1)
        out[0] = 0.0
        mask = 0
        for k, t in enumerate(idx):
            mask |= 1 << (int(t) - 1)
            out[k + 1] = self._fn(mask)
        return out

    def value_table(self) -> np.ndarray:
        """Values on all 2^T subsets, indexed by mask."""
        if self.T > MAX_ENUMERATION_T:
            raise ValueError(f"refusing to enumerate 2^{self.T} subsets")
        if self._table_fn is not None:
            return self._table_fn()
        return np.array([self._fn(m) for m in range(1 << self.T)])


def _window_count_table(T: int, window_mask: int) -> np.ndarray:
    # cnt[mask] = |mask & window| via doubling over bit positions
    cnt = np.zeros(1, dtype=np.int64)
    for t in range(T):
        inc = 1 if (window_mask >> t) & 1 else 0
        cnt = np.concatenate([cnt, cnt + inc])
    return cnt


def _modular_table(T: int, w: np.ndarray) -> np.ndarray:
    vals = np.zeros(1)
    for t in range(T):
        vals = np.concatenate([vals, vals + w[t]])
    return vals


def device_lower(ev: EvSpec, horizon: TimeHorizon) -> SetFunction:
    """Least energy (kWh) the EV must draw within a subset of periods.

    For a subset A this is the departure-energy minimum less whatever the EV
    could charge outside A while connected, floored at zero. Supermodular.
    """
    T = horizon.T
    wmask = ev.window_mask(T)
    cap = ev.max_rate * horizon.delta
    n_win = popcount(wmask)
    e_min = ev.energy_min

    def fn(mask: int) -> float:
        k = (mask & wmask).bit_count()
        return max(0.0, e_min - cap * (n_win - k))

    def chain_fn(order: np.ndarray) -> np.ndarray:
        in_win = (np.bitwise_and(wmask >> (order - 1), 1)).astype(np.float64)
        cum = np.concatenate([[0.0], np.cumsum(in_win)])
        return np.maximum(0.0, e_min - cap * (n_win - cum))

    def table_fn() -> np.ndarray:
        cnt = _window_count_table(T, wmask)
        return np.maximum(0.0, e_min - cap * (n_win - cnt))

    return SetFunction(T, fn, SUPERMODULAR, chain_fn, table_fn)


def device_upper(ev: EvSpec, horizon: TimeHorizon) -> SetFunction:
    """Most energy (kWh) the EV can draw within a subset of periods.

    Rate-limited on the periods of A that fall in the connection window and
    capped by the departure-energy maximum. Submodular.
    """
    T = horizon.T
    wmask = ev.window_mask(T)
    cap = ev.max_rate * horizon.delta
    e_max = ev.energy_max

    def fn(mask: int) -> float:
        k = (mask & wmask).bit_count()
        return min(e_max, cap * k)

    def chain_fn(order: np.ndarray) -> np.ndarray:
        in_win = (np.bitwise_and(wmask >> (order - 1), 1)).astype(np.float64)
        cum = np.concatenate([[0.0], np.cumsum(in_win)])
        return np.minimum(e_max, cap * cum)

    def table_fn() -> np.ndarray:
        cnt = _window_count_table(T, wmask)
        return np.minimum(e_max, cap * cnt)

    return SetFunction(T, fn, SUBMODULAR, chain_fn, table_fn)


def modular_from_vector(w: Sequence[float]) -> SetFunction:
    """Additive set function A -> sum of w over the periods in A."""
    wv = np.asarray(w, dtype=np.float64)
    if not np.all(np.isfinite(wv)):
        raise ValueError("modular weights must be finite")
    T = len(wv)

    def fn(mask: int) -> float:
        total = 0.0
        t = 0
        while mask:
            if mask & 1:
                total += wv[t]
            mask >>= 1
            t += 1
        return total

    def chain_fn(order: np.ndarray) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(wv[order - 1])])

    def table_fn() -> np.ndarray:
        return _modular_table(T, wv)

    return SetFunction(T, fn, MODULAR, chain_fn, table_fn)


def _combine_curvature(tags: list[str]) -> str:
    nontrivial = {t for t in tags if t != MODULAR}
    if not nontrivial:
        return MODULAR
    if len(nontrivial) == 1:
        return nontrivial.pop()
    return UNKNOWN


def sum_functions(fs: Sequence[SetFunction]) -> SetFunction:
    """Pointwise sum. Horizons must match; curvature combines naturally
    (modular terms preserve either curvature, mixing sub- with supermodular
    yields unknown)."""
    fs = list(fs)
    if not fs:
        raise ValueError("need at least one summand")
    T = fs[0].T
    for f in fs:
        if f.T != T:
            raise ValueError(f"horizon mismatch in sum: {f.T} != {T}")
    if len(fs) == 1:
        return fs[0]
    curvature = _combine_curvature([f.curvature for f in fs])

    def fn(mask: int) -> float:
        return sum(f._fn(mask) for f in fs)

    chain_fn = None
    if all(f._chain_fn is not None for f in fs):

        def chain_fn(order: np.ndarray) -> np.ndarray:
            acc = fs[0]._chain_fn(order).copy()
            for f in fs[1:]:
                acc += f._chain_fn(order)
            return acc

    table_fn = None
    if all(f._table_fn is not None for f in fs):

        def table_fn() -> np.ndarray:
            acc = fs[0]._table_fn().copy()
            for f in fs[1:]:
                acc += f._table_fn()
            return acc

    return SetFunction(T, fn, curvature, chain_fn, table_fn)


def negate_function(f: SetFunction) -> SetFunction:
    """Pointwise negation; flips sub- and supermodularity."""
    flip = {SUBMODULAR: SUPERMODULAR, SUPERMODULAR: SUBMODULAR}
    curvature = flip.get(f.curvature, f.curvature)
    chain_fn = None
    if f._chain_fn is not None:
        chain_fn = lambda order: -f._chain_fn(order)
    table_fn = None
    if f._table_fn is not None:
        table_fn = lambda: -f._table_fn()
    return SetFunction(f.T, lambda m: -f._fn(m), curvature, chain_fn, table_fn)


@dataclass
class CurvatureReport:
    """Exhaustive pairwise curvature check over all subset pairs.

    Slack conventions: ``submodular_slack`` is the minimum over pairs (A, B)
    of f(A) + f(B) - f(A|B) - f(A&B); nonnegative means submodular. The
    supermodular slack is the same quantity negated and minimized.
    """

    T: int
    declared: str
    submodular_slack: float
    submodular_worst: tuple[int, int]
    supermodular_slack: float
    supermodular_worst: tuple[int, int]
    tol: float = 1e-9

    @property
    def is_submodular(self) -> bool:
        return self.submodular_slack >= -self.tol

    @property
    def is_supermodular(self) -> bool:
        return self.supermodular_slack >= -self.tol

    @property
    def is_modular(self) -> bool:
        return self.is_submodular and self.is_supermodular

    @property
    def matches_declared(self) -> bool:
        if self.declared == SUBMODULAR:
            return self.is_submodular
        if self.declared == SUPERMODULAR:
            return self.is_supermodular
        if self.declared == MODULAR:
            return self.is_modular
        return True


def check_curvature(f: SetFunction, tol: float = 1e-9) -> CurvatureReport:
    """Verify sub/supermodularity by enumerating all subset pairs.

    Quadratic in 2^T; intended for T up to ~12. Chunked so memory stays flat.
    """
    T = f.T
    if T > 16:
        raise ValueError(f"pairwise curvature check is exhaustive; T={T} too large")
    vals = f.value_table()
    n = 1 << T
    masks = np.arange(n, dtype=np.int64)
    worst_sub = (0, 0)
    worst_sup = (0, 0)
    min_sub = np.inf
    min_sup = np.inf
    chunk = max(1, min(n, (1 << 22) // n))
    for start in range(0, n, chunk):
        a = masks[start : start + chunk, None]
        union = np.bitwise_or(a, masks[None, :])
        inter = np.bitwise_and(a, masks[None, :])
        slack = vals[a] + vals[masks[None, :]] - vals[union] - vals[inter]
        i, j = np.unravel_index(np.argmin(slack), slack.shape)
        if slack[i, j] < min_sub:
            min_sub = float(slack[i, j])
            worst_sub = (int(start + i), int(j))
        i, j = np.unravel_index(np.argmax(slack), slack.shape)
        if -slack[i, j] < min_sup:
            min_sup = float(-slack[i, j])
            worst_sup = (int(start + i), int(j))
    return CurvatureReport(T, f.curvature, min_sub, worst_sub, min_sup, worst_sup, tol)
