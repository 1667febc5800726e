"""
oracle.py
Date: 09/10/2026
--------------------------------------------------------#
Description: Slow, obviously-correct reference versions of the aggregation
building blocks, and the randomised suites that compare them with the fast
implementations.

- brute_force_krum: triple loops in plain Python
- pseudocode_filter: the median filter read line by line with 1-based indices
- brute_force_sse_split: exhaustive search with plain-Python sums
- run_oracle_suites: what `robust-fl oracle` runs

Notes:
The suites are deterministic for a given seed. They return counts rather than
raising so the CLI can print a table.
--------------------------------------------------------#
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from . import aggregation, changepoint

logger = logging.getLogger(__name__)


@dataclass
class SuiteResult:
    name: str
    instances: int
    mismatches: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.mismatches == 0


def brute_force_krum(updates: Sequence[Sequence[float]], f: int) -> Tuple[int, List[float]]:
    """
    Returns:
        (winning client index, every client's Krum score)
    """
    n = len(updates)
    d = len(updates[0])
    dist = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            total = 0.0
            for k in range(d):
                diff = updates[i][k] - updates[j][k]
                total += diff * diff
            dist[i][j] = total

    scores = []
    keep = max(1, n - f - 2)
    for i in range(n):
        others = sorted(dist[i][j] for j in range(n) if j != i)
        score = 0.0
        for value in others[:keep]:
            score += value
        scores.append(score)

    winner = 0
    for i in range(1, n):
        if scores[i] < scores[winner]:
            winner = i
    return winner, scores


def pseudocode_filter(row: Sequence[float]) -> List[float]:
    """
    The median filter exactly as the pseudocode reads, positions 1..n.
    """
    n = len(row)
    if n < 2:
        return list(row)
    d = [None] + list(row)  # d[1..n]
    mid = n // 2
    median = d[mid]
    delta_max = median - d[1]
    tau = median + delta_max
    j_max = n
    for j in range(mid + 1, n + 1):
        if d[j] > tau:
            j_max = j - 1
            break
    return [d[j] for j in range(1, j_max + 1)]


def _plain_sse(values: Sequence[float]) -> float:
    if not values:
        return 0.0
    mean = sum(values) / len(values)
    return sum((v - mean) ** 2 for v in values)


def brute_force_sse_split(row: Sequence[float]) -> int:
    """
    Exhaustive change point search; near-ties go to the largest split.
    """
    m = len(row)
    if m < 2:
        return m
    costs = {k: _plain_sse(row[:k]) + _plain_sse(row[k:]) for k in range(1, m)}
    best = min(costs.values())
    tolerance = max(1e-12, 1e-9 * _plain_sse(row))
    for k in range(m - 1, 0, -1):
        if costs[k] <= best + tolerance:
            return k
    return 1


def _random_updates(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    # a tight cluster plus a few far points keeps the winner away from exact ties
    updates = rng.normal(0.0, 1.0, size=(n, d))
    n_far = int(rng.integers(0, (n - 3) // 2 + 1))
    if n_far:
        updates[-n_far:] += rng.normal(0.0, 20.0, size=(n_far, d))
    return updates


def krum_suite(instances: int = 200, seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    mismatches = 0
    for _ in range(instances):
        n = int(rng.integers(3, 13))
        d = int(rng.integers(1, 6))
        f = int(rng.integers(0, (n - 3) // 2 + 1))
        updates = _random_updates(rng, n, d)
        result = aggregation.aggregate_krum(updates, f)
        winner, _ = brute_force_krum(updates.tolist(), f)
        if result.selected_index != winner or not np.array_equal(result.aggregate, updates[winner]):
            mismatches += 1
    return SuiteResult("krum", instances, mismatches, time.perf_counter() - start)


def _random_sorted_row(rng: np.random.Generator, max_len: int) -> np.ndarray:
    m = int(rng.integers(2, max_len + 1))
    base = rng.exponential(1.0, size=m)
    n_tail = int(rng.integers(0, m // 2 + 1))
    if n_tail:
        base[:n_tail] *= rng.uniform(10.0, 1e4)
    return np.sort(base)


def filter_suite(instances: int = 100, seed: int = 1) -> SuiteResult:
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    mismatches = 0
    for _ in range(instances):
        row = _random_sorted_row(rng, 40)
        fast = changepoint.filter_extreme_values(row).kept.tolist()
        if fast != pseudocode_filter(row.tolist()):
            mismatches += 1
    return SuiteResult("filter", instances, mismatches, time.perf_counter() - start)


def sse_suite(instances: int = 500, seed: int = 2) -> SuiteResult:
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    mismatches = 0
    for _ in range(instances):
        row = _random_sorted_row(rng, 64)
        if changepoint.sse_split(row).split != brute_force_sse_split(row.tolist()):
            mismatches += 1
    return SuiteResult("sse_split", instances, mismatches, time.perf_counter() - start)


def run_oracle_suites(seed: int = 0) -> List[SuiteResult]:
    results = [krum_suite(seed=seed), filter_suite(seed=seed + 1), sse_suite(seed=seed + 2)]
    for r in results:
        logger.info("%s: %d instances, %d mismatches (%.2fs)", r.name, r.instances, r.mismatches, r.seconds)
    return results
