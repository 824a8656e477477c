"""Exact combinatorial oracles over D independent binary variables.

A configuration is a bit-vector a in {0,1}^D scored by <a, t> for
per-variable scores t.  This module provides the highest-scoring
configuration (MAP), a budget-constrained MAP, k-best enumeration in
O(k D log D) without touching the remaining 2^D - k configurations, and
exhaustive enumeration for small D as a cross-check.  Polytope adapters
at the bottom expose these oracles through the interface the active-set
solver expects.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Structure",
    "map_oracle",
    "budget_map_oracle",
    "kbest",
    "enumerate_all",
    "config_matrix",
    "BitVectorPolytope",
    "BudgetedBitVectorPolytope",
    "IdentityPolytope",
]


def _as_variable_scores(t):
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 1 or t.size == 0:
        raise ValueError("variable scores must be a nonempty 1-d vector")
    if not np.all(np.isfinite(t)):
        raise ValueError("variable scores must be finite")
    return t


@dataclass(frozen=True)
class Structure:
    """One global configuration: a bit tuple plus its score <bits, t>.

    Identity (equality, hashing) is by bit content only; the score is a
    cached value relative to whatever scores the structure was built from.
    """

    bits: tuple
    score: float = field(compare=False)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.bits, dtype=np.float64)

    @property
    def index(self) -> int:
        """Integer code of the configuration, bit i contributing 2**i."""
        code = 0
        for i, b in enumerate(self.bits):
            if b:
                code += 1 << i
        return code


def _structure(bits, t) -> Structure:
    bits = np.asarray(bits)
    return Structure(tuple(int(b) for b in bits), float(bits @ t))


def map_oracle(t) -> Structure:
    """Highest-scoring configuration: bit i is active iff t_i >= 0."""
    t = _as_variable_scores(t)
    return _structure(t >= 0, t)


def budget_map_oracle(t, budget: int) -> Structure:
    """Best configuration with at most ``budget`` active bits.

    Activates the nonnegative entries among the ``budget`` largest scores;
    ties at the boundary go to the lowest index.
    """
    t = _as_variable_scores(t)
    if not 1 <= budget <= t.size:
        raise ValueError("budget must be in [1, D]")
    order = np.argsort(-t, kind="stable")[:budget]
    bits = np.zeros(t.size, dtype=np.int64)
    bits[order[t[order] >= 0]] = 1
    return _structure(bits, t)


def _flip(bits, i):
    return bits[:i] + (1 - bits[i],) + bits[i + 1:]


def kbest(t, k: int) -> list:
    """The k highest-scoring configurations, best first.

    Ordering is by score descending with the lexicographically smallest
    bit-vector winning ties.  Best-first search over flip sets away from
    the MAP configuration: flipping variable i costs |t_i|, and flip sets
    are generated Lawler-style (each subset exactly once, children never
    cheaper than parents).  Configurations of equal cost are collected as
    a full group before emission so the tie-break is global rather than
    an accident of generation order; with heavily tied scores this can
    enumerate a whole cost class even when k is small.
    """
    t = _as_variable_scores(t)
    if k < 1:
        raise ValueError("k must be >= 1")
    D = t.size
    k_eff = min(k, 1 << D) if D < 63 else k
    order = np.argsort(np.abs(t), kind="stable")
    cost = np.abs(t)[order]
    root_bits = tuple(int(b) for b in (t >= 0))

    results = []
    group = []
    group_cost = 0.0

    def flush():
        group.sort()
        for b in group:
            if len(results) == k_eff:
                break
            results.append(b)
        group.clear()

    # Heap entries: (flip cost, bits, last flipped position in sorted
    # order, cost without that last flip).  Tracking the trailing cost
    # keeps successor costs exactly nondecreasing under rounding.
    heap = [(0.0, root_bits, -1, 0.0)]
    while heap:
        c, bits, last, trail = heapq.heappop(heap)
        if c > group_cost and group:
            flush()
            if len(results) == k_eff:
                break
        group_cost = max(group_cost, c)
        group.append(bits)
        nxt = last + 1
        if nxt < D:
            pos = int(order[nxt])
            heapq.heappush(heap, (c + cost[nxt], _flip(bits, pos), nxt, c))
            if last >= 0:
                prev = int(order[last])
                heapq.heappush(
                    heap,
                    (trail + cost[nxt], _flip(_flip(bits, prev), pos), nxt, trail),
                )
    if len(results) < k_eff:
        flush()
    return [Structure(b, float(np.dot(b, t))) for b in results]


def enumerate_all(t) -> list:
    """Every configuration with its score, in integer-code order.

    Exhaustive by construction; refuses D > 20 outright.
    """
    t = _as_variable_scores(t)
    if t.size > 20:
        raise ValueError("enumeration over 2^D configurations requires D <= 20")
    bits = config_matrix(t.size)
    scores = bits @ t
    return [
        Structure(tuple(int(b) for b in row), float(sc))
        for row, sc in zip(bits, scores)
    ]


def config_matrix(d: int) -> np.ndarray:
    """The (2^D, D) matrix of all bit-vectors, row r encoding integer r."""
    if not 1 <= d <= 20:
        raise ValueError("config_matrix requires 1 <= D <= 20")
    codes = np.arange(1 << d, dtype=np.int64)
    return ((codes[:, None] >> np.arange(d)) & 1).astype(np.float64)


class BitVectorPolytope:
    """All of {0,1}^D as vertices; MAP by the per-variable sign rule."""

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim

    def map(self, t) -> Structure:
        return map_oracle(t)

    @property
    def n_outcomes(self) -> int:
        return 1 << self.dim

    def outcome_index(self, structure: Structure) -> int:
        return structure.index


class BudgetedBitVectorPolytope(BitVectorPolytope):
    """Bit-vectors with at most ``budget`` active bits."""

    def __init__(self, dim: int, budget: int):
        super().__init__(dim)
        if not 1 <= budget <= dim:
            raise ValueError("budget must be in [1, D]")
        self.budget = budget

    def map(self, t) -> Structure:
        return budget_map_oracle(t, self.budget)


class IdentityPolytope:
    """The unstructured case: vertices are the K one-hot indicators.

    MAP is the argmax of the scores, first index on ties, so SparseMAP
    over this polytope must reproduce plain sparsemax.
    """

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim

    def map(self, t) -> Structure:
        t = _as_variable_scores(t)
        bits = np.zeros(t.size, dtype=np.int64)
        bits[int(np.argmax(t))] = 1
        return _structure(bits, t)

    @property
    def n_outcomes(self) -> int:
        return self.dim

    def outcome_index(self, structure: Structure) -> int:
        return structure.bits.index(1)
