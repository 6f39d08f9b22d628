"""Submodular function minimization.

Two backends: exhaustive enumeration for small horizons, and the
Fujishige-Wolfe minimum-norm-point algorithm over the base polytope for
general ones. Supermodular maximization reduces to minimizing the negation.

The minimum-norm-point method maintains the current iterate as a convex
combination of base-polytope vertices produced by the ascending-order greedy;
affine subproblems are solved by dense least squares. The minimizing set is
read off the strictly negative coordinates of the final point, then polished
by single-element moves to absorb threshold noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .setfn import SetFunction, negate_function

DEFAULT_EXHAUSTIVE_THRESHOLD = 16

# Coordinates below this are treated as strictly negative when extracting the
# minimizer from the minimum-norm point.
NEGATIVE_COORD_TOL = 1e-9


class SfmError(RuntimeError):
    pass


class SfmConvergenceError(SfmError):
    """Raised instead of returning a silently wrong answer."""


@dataclass
class SfmBackend:
    """Dispatch policy for SFM solves: exhaustive up to ``threshold`` periods,
    minimum-norm point beyond."""

    threshold: int = DEFAULT_EXHAUSTIVE_THRESHOLD
    tol: float = 1e-9
    max_iter: int | None = None
    mode: str = "auto"  # auto | exhaustive | min_norm


@dataclass
class SfmResult:
    minimizer: int
    value: float
    certificate: np.ndarray | None
    method: str
    iterations: int


def minimize_exhaustive(f: SetFunction, T: int | None = None,
                        threshold: int = DEFAULT_EXHAUSTIVE_THRESHOLD) -> SfmResult:
    """Global minimum over all 2^T subsets; ties resolve to the smallest mask."""
    T = f.T if T is None else T
    if T > threshold:
        raise SfmError(f"exhaustive search refused for T={T} > threshold={threshold}")
    vals = f.value_table()
    idx = int(np.argmin(vals))  # first occurrence = smallest mask
    return SfmResult(minimizer=idx, value=float(vals[idx]), certificate=None,
                     method="exhaustive", iterations=1 << T)


def _greedy_base_vertex(prefix_values, T: int, weights: np.ndarray) -> np.ndarray:
    """Vertex of the base polytope minimizing <weights, x>: marginals along
    the ascending-weight order."""
    pos = np.argsort(weights, kind="stable")
    chain = prefix_values(pos + 1)
    x = np.empty(T)
    x[pos] = np.diff(chain)
    return x


def _affine_minimizer(S: np.ndarray) -> np.ndarray:
    """Coefficients (summing to 1) of the min-norm point of the affine hull
    of the rows of S."""
    m = S.shape[0]
    M = np.zeros((m + 1, m + 1))
    M[1:, 1:] = 2.0 * (S @ S.T)
    M[0, 1:] = 1.0
    M[1:, 0] = 1.0
    rhs = np.zeros(m + 1)
    rhs[0] = 1.0
    sol, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    return sol[1:]


def _wolfe_min_norm(prefix_values, T: int, max_iter: int, eps: float = 1e-12):
    """Minimum-norm point of the base polytope. Returns (x, majors)."""
    x = _greedy_base_vertex(prefix_values, T, np.zeros(T))
    S = [x.copy()]
    lam = np.array([1.0])
    majors = 0
    while majors < max_iter:
        majors += 1
        q = _greedy_base_vertex(prefix_values, T, x)
        scale = max(1.0, float(x @ x), float(q @ q))
        if float(x @ q) >= float(x @ x) - eps * scale:
            break
        if any(np.max(np.abs(q - s)) < 1e-12 * np.sqrt(scale) for s in S):
            break  # oracle repeats a held vertex: no further progress possible
        S.append(q)
        lam = np.append(lam, 0.0)
        minors = 0
        while minors < 10 * (T + 2):
            minors += 1
            A = np.vstack(S)
            w = _affine_minimizer(A)
            if np.all(w >= -1e-12):
                lam = np.clip(w, 0.0, None)
                lam /= lam.sum()
                x = A.T @ lam
                break
            # step to the boundary of the convex hull and drop dead vertices
            shrink = lam - w
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(shrink > 1e-12, lam / shrink, np.inf)
            theta = min(1.0, float(np.min(ratios)))
            lam = (1.0 - theta) * lam + theta * w
            keep = lam > 1e-12
            if keep.all():
                lam[np.argmin(lam)] = 0.0
                keep = lam > 0.0
            if not keep.any():
                keep[int(np.argmax(lam))] = True
            S = [s for s, k in zip(S, keep) if k]
            lam = np.clip(lam[keep], 0.0, None)
            total = lam.sum()
            lam = lam / total if total > 0 else np.full(len(S), 1.0 / len(S))
            x = np.vstack(S).T @ lam
    return x, majors


def _polish_minimizer(fn, T: int, mask: int) -> tuple[int, float]:
    """Single-element add/remove passes until no strict improvement."""
    value = fn(mask)
    for _ in range(4 * T + 4):
        improved = False
        for t in range(T):
            bit = 1 << t
            cand = mask ^ bit
            v = fn(cand)
            if v < value:
                mask, value = cand, v
                improved = True
        if not improved:
            break
    return mask, value


def minimize_min_norm(f: SetFunction, T: int | None = None, tol: float = 1e-9,
                      max_iter: int | None = None) -> SfmResult:
    """Minimize a submodular function via the minimum-norm point of its base
    polytope.

    ``tol`` is the value-accuracy target used by callers; the internal
    stopping rule is scale-relative. Raises :class:`SfmConvergenceError` when
    the major-cycle budget (default 10*T^2) is exhausted.
    """
    T = f.T if T is None else T
    if max_iter is None:
        max_iter = 10 * T * T + 10
    shift = f(0)
    if abs(shift) > 0.0:
        base = f

        def prefix_values(order):
            return base.prefix_values(order) - shift

        def fn(mask):
            return base(mask) - shift
    else:
        prefix_values = f.prefix_values
        fn = f

    x, majors = _wolfe_min_norm(prefix_values, T, max_iter,
                                eps=min(1e-12, tol * 1e-3))
    if majors >= max_iter:
        raise SfmConvergenceError(
            f"minimum-norm point did not converge in {max_iter} major cycles")
    mask = 0
    for t in range(T):
        if x[t] < -NEGATIVE_COORD_TOL:
            mask |= 1 << t
    mask, value = _polish_minimizer(fn, T, mask)
    if value > 0.0:  # empty set always achieves 0 after normalization
        mask, value = 0, 0.0
    return SfmResult(minimizer=mask, value=value + shift, certificate=x,
                     method="min_norm_point", iterations=majors)


def solve_min(f: SetFunction, T: int | None = None,
              backend: SfmBackend | None = None) -> SfmResult:
    """Backend dispatch: exhaustive at or below the threshold, min-norm above."""
    be = backend or SfmBackend()
    T = f.T if T is None else T
    if be.mode == "exhaustive" or (be.mode == "auto" and T <= be.threshold):
        return minimize_exhaustive(f, T, threshold=max(T, be.threshold))
    return minimize_min_norm(f, T, tol=be.tol, max_iter=be.max_iter)


def maximize_supermodular(g: SetFunction, T: int | None = None,
                          backend: SfmBackend | None = None) -> SfmResult:
    """Maximize a supermodular function by minimizing its negation."""
    res = solve_min(negate_function(g), T, backend)
    return SfmResult(minimizer=res.minimizer, value=-res.value,
                     certificate=None if res.certificate is None else -res.certificate,
                     method=res.method, iterations=res.iterations)
