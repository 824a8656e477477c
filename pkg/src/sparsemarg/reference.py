"""Brute-force and finite-difference references.

Deliberately naive implementations used to validate the fast paths: the
simplex projection by exhaustive support enumeration, its cardinality-
constrained variant, k-best and budget oracles by full enumeration, the
closed-form hypercube projection, and a central-difference gradient
checker.  Nothing here shares code with the solvers it checks.
"""

from __future__ import annotations

import numpy as np

from .bitvec import config_matrix

__all__ = [
    "sparsemax_bruteforce",
    "topk_sparsemax_bruteforce",
    "kbest_bruteforce",
    "budget_bruteforce",
    "hypercube_projection",
    "central_difference",
    "relative_error",
]


def _support_candidates(s, masks):
    """Dense projections for every candidate support mask, plus their
    feasibility and squared distance to s."""
    sizes = masks.sum(axis=1)
    tau = (masks @ s - 1.0) / sizes
    p = masks * (s[None, :] - tau[:, None])
    feasible = np.all((p >= 0) | (masks == 0), axis=1)
    p = np.where(masks > 0, p, 0.0)
    obj = ((p - s[None, :]) ** 2).sum(axis=1)
    return p, feasible, obj


def sparsemax_bruteforce(s) -> np.ndarray:
    """Simplex projection by trying every nonempty support (K <= 16).

    For a fixed support the equality-constrained least squares solution
    is s - (sum(s) - 1)/|S| on the support and zero elsewhere; the
    projection is the feasible candidate closest to s.
    """
    s = np.asarray(s, dtype=np.float64)
    K = s.size
    if K > 16:
        raise ValueError("brute force support enumeration capped at K = 16")
    masks = config_matrix(K)[1:]
    p, feasible, obj = _support_candidates(s, masks)
    best = np.argmin(np.where(feasible, obj, np.inf))
    return p[best]


def topk_sparsemax_bruteforce(s, k: int) -> np.ndarray:
    """Closest simplex point to s among supports of size at most k."""
    s = np.asarray(s, dtype=np.float64)
    if s.size > 16:
        raise ValueError("brute force support enumeration capped at K = 16")
    masks = config_matrix(s.size)[1:]
    masks = masks[masks.sum(axis=1) <= k]
    p, feasible, obj = _support_candidates(s, masks)
    best = np.argmin(np.where(feasible, obj, np.inf))
    return p[best]


def kbest_bruteforce(t, k: int) -> list:
    """Top-k configurations by (score desc, bits lexicographic) sorting."""
    t = np.asarray(t, dtype=np.float64)
    bits = config_matrix(t.size)
    scores = bits @ t
    rows = [(float(sc), tuple(int(b) for b in row)) for row, sc in zip(bits, scores)]
    rows.sort(key=lambda r: (-r[0], r[1]))
    return [r[1] for r in rows[:k]]


def budget_bruteforce(t, budget: int) -> tuple:
    """Best configuration with at most ``budget`` active bits, enumerated.

    Score ties prefer the lexicographically greatest bit-vector, i.e.
    active bits at the lowest indices; that is the enumeration form of
    the sign rule, which turns zero-scored bits on.
    """
    t = np.asarray(t, dtype=np.float64)
    bits = config_matrix(t.size)
    bits = bits[bits.sum(axis=1) <= budget]
    scores = bits @ t
    # Mathematically tied scores can differ by an ulp depending on the
    # summation path, so ties are resolved within a small band.
    band = 1e-9 * max(1.0, np.abs(t).sum())
    tied = bits[scores >= scores.max() - band]
    return max(tuple(int(b) for b in row) for row in tied)


def hypercube_projection(t) -> np.ndarray:
    """Euclidean projection onto [0,1]^D: per-coordinate clipping.

    This is the closed form for the moments of SparseMAP over independent
    binary variables, independent of any active-set machinery.
    """
    return np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)


def central_difference(f, x, h: float) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = h
        g[i] = (f(x + step) - f(x - step)) / (2.0 * h)
    return g


def relative_error(a, b, floor: float = 1e-9) -> float:
    """Max-norm relative difference with a scale floor.

    The floor keeps near-zero comparisons (for example the vjp at a
    singleton support, which is exactly zero up to rounding dust) from
    dividing dust by dust.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    return float(np.abs(a - b).max() / scale)
