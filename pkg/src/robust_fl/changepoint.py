"""
changepoint.py
Date: 03/10/2026
--------------------------------------------------------#
Description: Estimates how many Byzantine clients sit in one client's sorted
distance row.

- filter_extreme_values: median-threshold filter that truncates the row at the
  first distance above tau = median + (median - smallest)
- sse_split: single change point that minimises the summed squared error of
  the left and right segments
- estimate_f: combines the two into a per-client estimate f_hat

Inputs: ascending rows of squared Euclidean distances (self-distance excluded)

Outputs: FilterOutcome, SplitResult and ByzantineEstimate records

Notes:
Positions inside filter_extreme_values follow 1-based counting for `mid`
(mid = floor(m / 2), the lower median for even m); arrays are 0-based.
--------------------------------------------------------#
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)

# rows shorter than this are not segmented
MIN_SEGMENT_ROW = 4

# costs this close to the minimum are ties (relative to the row's total SSE)
TIE_RTOL = 1e-9
TIE_ATOL = 1e-12

RowLike = Union[Sequence[float], np.ndarray]


@dataclass(frozen=True)
class FilterOutcome:
    kept: np.ndarray
    removed_count: int
    threshold: float


@dataclass(frozen=True)
class SplitResult:
    split: int
    left_sse: float
    right_sse: float


@dataclass(frozen=True)
class ByzantineEstimate:
    """
    Per-client estimate of the Byzantine count.

    f_hat = removed_by_filter + (filtered length - sse_change_point) whenever
    the remainder was long enough to segment, otherwise removed_by_filter.
    """

    f_hat: int
    removed_by_filter: int
    sse_change_point: int
    left_sse: float
    right_sse: float
    degenerate: bool = False
    remainder_degenerate: bool = False


def as_sorted_row(row: RowLike) -> np.ndarray:
    """
    Convert a row to a float array and check it is finite and nondecreasing.
    """
    values = np.asarray(row, dtype=float).ravel()
    if not np.all(np.isfinite(values)):
        raise ValueError("Distance row contains non-finite values")
    if values.size > 1 and np.any(np.diff(values) < 0):
        raise ValueError("Distance row must be sorted in ascending order")
    return values


def filter_extreme_values(row: RowLike) -> FilterOutcome:
    """
    Drop the right tail of a sorted distance row starting at the first value
    that exceeds tau = median + (median - row[0]).

    Args:
        row: ascending distances, length m.
    Returns:
        FilterOutcome with the kept prefix, how many values were removed and tau.
    """
    values = as_sorted_row(row)
    m = values.size
    if m < 2:
        return FilterOutcome(kept=values.copy(), removed_count=0, threshold=math.inf)

    mid = m // 2
    median = values[mid - 1]
    delta_max = median - values[0]
    tau = median + delta_max

    # scan positions mid+1..m (1-based) == values[mid:]
    exceed = np.flatnonzero(values[mid:] > tau)
    cut = mid + int(exceed[0]) if exceed.size else m

    return FilterOutcome(kept=values[:cut].copy(), removed_count=m - cut, threshold=float(tau))


def segment_sse(segment: np.ndarray) -> float:
    """Sum of squared deviations from the segment mean."""
    if segment.size == 0:
        return 0.0
    return float(np.sum((segment - segment.mean()) ** 2))


def pick_split(costs: Sequence[float], total_sse: float) -> int:
    """
    Return the 1-based split with the lowest cost; near-ties go to the largest split.
    """
    best = min(costs)
    tolerance = max(TIE_ATOL, TIE_RTOL * total_sse)
    chosen = 1
    for k, cost in enumerate(costs, start=1):
        if cost - best <= tolerance:
            chosen = k
    return chosen


def sse_split(row: RowLike) -> SplitResult:
    """
    Find the change point k* in 1..m-1 minimising SSE(row[:k]) + SSE(row[k:]).

    Ties (within floating-point noise) resolve to the largest k, i.e. the
    fewest suspected Byzantine entries on the right.
    """
    values = as_sorted_row(row)
    m = values.size
    if m < 2:
        return SplitResult(split=m, left_sse=0.0, right_sse=0.0)

    lefts = []
    rights = []
    for k in range(1, m):
        lefts.append(segment_sse(values[:k]))
        rights.append(segment_sse(values[k:]))
    costs = [left + right for left, right in zip(lefts, rights)]

    k_star = pick_split(costs, segment_sse(values))
    return SplitResult(split=k_star, left_sse=lefts[k_star - 1], right_sse=rights[k_star - 1])


def estimate_f(row: RowLike, use_filter: bool = True) -> ByzantineEstimate:
    """
    Estimate how many entries of one client's sorted distance row come from
    Byzantine clients.

    Args:
        row: ascending distances from one client to the n-1 others.
        use_filter: run filter_extreme_values first (ArKrum); when False the
            SSE split runs on the raw row (rKrum).
    Returns:
        ByzantineEstimate. Rows with fewer than 4 values give f_hat = 0 and
        degenerate = True.
    """
    values = as_sorted_row(row)
    m = values.size
    if m < MIN_SEGMENT_ROW:
        return ByzantineEstimate(
            f_hat=0,
            removed_by_filter=0,
            sse_change_point=m,
            left_sse=0.0,
            right_sse=0.0,
            degenerate=True,
        )

    if not use_filter:
        split = sse_split(values)
        return ByzantineEstimate(
            f_hat=m - split.split,
            removed_by_filter=0,
            sse_change_point=split.split,
            left_sse=split.left_sse,
            right_sse=split.right_sse,
        )

    outcome = filter_extreme_values(values)
    kept = outcome.kept
    if kept.size < MIN_SEGMENT_ROW:
        return ByzantineEstimate(
            f_hat=outcome.removed_count,
            removed_by_filter=outcome.removed_count,
            sse_change_point=kept.size,
            left_sse=segment_sse(kept),
            right_sse=0.0,
            remainder_degenerate=True,
        )

    split = sse_split(kept)
    return ByzantineEstimate(
        f_hat=outcome.removed_count + (kept.size - split.split),
        removed_by_filter=outcome.removed_count,
        sse_change_point=split.split,
        left_sse=split.left_sse,
        right_sse=split.right_sse,
    )
