"""
aggregation.py
Date: 04/10/2026
--------------------------------------------------------#
Description: Server-side aggregation rules over one round of client updates.

- pairwise_sq_distances, sorted_row, krum_score: the shared Krum machinery
- aggregate_mean: coordinate-wise average of every update
- aggregate_krum / aggregate_mkrum: Krum-family rules with a known f
- aggregate_rkrum: Krum with a per-client f_hat from SSE segmentation
- aggregate_arkrum: rKrum + median filter + averaging of the n - f_hat
  updates nearest the winner

Inputs: an (n, d) array (or sequence of equal-length vectors), one row per client

Outputs: AggregationResult holding the aggregate and what produced it

Notes:
Client indices are 0-based. Every argmin breaks ties towards the lowest index,
and Krum scores are summed left to right over the sorted row so the result does
not depend on the order clients are scored in.
--------------------------------------------------------#
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .changepoint import ByzantineEstimate, estimate_f

logger = logging.getLogger(__name__)

UpdatesLike = Union[np.ndarray, Sequence[Sequence[float]]]


class ConstraintViolation(ValueError):
    """Raised when a known-f Krum rule is asked to run with 2 + 2f >= n."""


class InvalidUpdateError(ValueError):
    """Raised when a round's updates cannot be aggregated."""

    def __init__(self, message: str, client_index: Optional[int] = None):
        super().__init__(message)
        self.client_index = client_index


@dataclass(frozen=True)
class ScoredClient:
    index: int
    score: float
    neighbor_indices: Tuple[int, ...]


@dataclass
class AggregationResult:
    """
    What an aggregation rule hands back to the server.

    aggregate is the vector that becomes the next global model, selected_index
    the Krum winner (None for Mean), averaged_indices the clients whose updates
    were averaged, nearest first.
    """

    aggregate: np.ndarray
    selected_index: Optional[int]
    averaged_indices: Tuple[int, ...]
    estimates: Optional[List[ByzantineEstimate]] = None
    warnings: List[str] = field(default_factory=list)

    @property
    def f_hat_of_winner(self) -> Optional[int]:
        if self.estimates is None or self.selected_index is None:
            return None
        return self.estimates[self.selected_index].f_hat


def as_update_set(updates: UpdatesLike, min_clients: int = 1) -> np.ndarray:
    """
    Stack client updates into an (n, d) float array and validate them.

    Raises:
        InvalidUpdateError: on ragged dimensions, empty vectors or non-finite
            values (client_index names the first offending client).
    """
    if isinstance(updates, np.ndarray):
        rows = list(updates) if updates.ndim == 2 else None
        if rows is None:
            raise InvalidUpdateError(f"Updates must be a 2-D array, got shape {updates.shape}")
    else:
        rows = [np.asarray(u, dtype=float).ravel() for u in updates]

    if len(rows) < min_clients:
        raise InvalidUpdateError(f"Need at least {min_clients} client updates, got {len(rows)}")

    dims = {np.asarray(r).size for r in rows}
    if len(dims) != 1:
        raise InvalidUpdateError(f"Client updates have mismatched dimensions: {sorted(dims)}")
    if dims == {0}:
        raise InvalidUpdateError("Client updates must have dimension d >= 1")

    stacked = np.vstack(rows).astype(float, copy=False)
    finite_rows = np.isfinite(stacked).all(axis=1)
    if not finite_rows.all():
        bad = int(np.flatnonzero(~finite_rows)[0])
        raise InvalidUpdateError(f"Update from client {bad} contains NaN or Inf", client_index=bad)
    return stacked


def pairwise_sq_distances(updates: UpdatesLike) -> np.ndarray:
    """
    Squared Euclidean distance between every pair of updates.

    Returns an (n, n) symmetric matrix with a zero diagonal where entry (i, j)
    is sum_k (u_ik - u_jk)^2.
    """
    stacked = as_update_set(updates)
    if stacked.shape[0] == 1:
        return np.zeros((1, 1))
    return squareform(pdist(stacked, metric="sqeuclidean"))


def _off_diagonal_order(matrix: np.ndarray, i: int) -> np.ndarray:
    n = matrix.shape[0]
    if not 0 <= i < n:
        raise IndexError(f"Client index {i} out of range for {n} clients")
    others = np.delete(np.arange(n), i)
    order = np.argsort(matrix[i, others], kind="stable")
    return others[order]


def sorted_row(matrix: np.ndarray, i: int) -> np.ndarray:
    """
    Distances from client i to the n-1 other clients, ascending.

    Equal distances keep the lower client index first.
    """
    return matrix[i, _off_diagonal_order(matrix, i)]


def krum_score(row: np.ndarray, f: int, n: int) -> Tuple[float, int]:
    """
    Sum of the first max(1, n - f - 2) entries of a sorted row.

    Returns:
        (score, neighbor_count)
    """
    if f < 0:
        raise ValueError(f"f must be non-negative, got {f}")
    row = np.asarray(row, dtype=float)
    neighbor_count = max(1, n - f - 2)
    neighbor_count = min(neighbor_count, row.size)
    if neighbor_count == 0:
        return 0.0, 0
    # cumsum adds strictly left to right
    score = float(np.cumsum(row[:neighbor_count])[-1])
    return score, neighbor_count


def _clamp_warning(i: int, f: int, n: int) -> Optional[str]:
    if n - f - 2 < 1:
        return f"client {i}: n - f - 2 = {n - f - 2} < 1 (n={n}, f={f}); neighbor window clamped to 1"
    return None


def score_clients(matrix: np.ndarray, f_per_client: Sequence[int]) -> Tuple[List[ScoredClient], List[str]]:
    """
    Krum score of every client given a (possibly per-client) Byzantine count.

    Returns:
        The ScoredClient list in client order and any clamp warnings.
    """
    n = matrix.shape[0]
    scored: List[ScoredClient] = []
    warnings: List[str] = []
    for i in range(n):
        order = _off_diagonal_order(matrix, i)
        score, count = krum_score(matrix[i, order], f_per_client[i], n)
        scored.append(ScoredClient(index=i, score=score, neighbor_indices=tuple(int(j) for j in order[:count])))
        message = _clamp_warning(i, f_per_client[i], n)
        if message:
            warnings.append(message)
    if warnings:
        logger.warning("%d Krum neighbor windows clamped to 1", len(warnings))
    return scored, warnings


def _argmin_client(scored: Sequence[ScoredClient]) -> int:
    # np.argmin returns the first (lowest index) minimum
    return int(np.argmin([s.score for s in scored]))


def nearest_indices(matrix: np.ndarray, center: int, m: int) -> Tuple[int, ...]:
    """
    The m clients closest to `center`, center first, remaining ties by lowest index.
    """
    n = matrix.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"m must be in [1, {n}], got {m}")
    idx = np.arange(n)
    # lexsort: last key is primary
    order = np.lexsort((idx, matrix[center], idx != center))
    return tuple(int(j) for j in order[:m])


def neighbor_average(updates: UpdatesLike, matrix: np.ndarray, center: int, m: int) -> np.ndarray:
    """
    Coordinate-wise mean of the m updates nearest to the update of `center`.
    """
    stacked = as_update_set(updates)
    chosen = nearest_indices(matrix, center, m)
    return stacked[list(chosen)].mean(axis=0)


def check_krum_constraint(f: int, n: int) -> None:
    if f < 0:
        raise ConstraintViolation(f"f must be non-negative, got f={f}")
    if 2 + 2 * f >= n:
        raise ConstraintViolation(f"Krum requires 2 + 2f < n, got f={f}, n={n} (2 + 2*{f} = {2 + 2 * f} >= {n})")


def aggregate_mean(updates: UpdatesLike) -> AggregationResult:
    stacked = as_update_set(updates)
    n = stacked.shape[0]
    return AggregationResult(
        aggregate=stacked.mean(axis=0),
        selected_index=None,
        averaged_indices=tuple(range(n)),
    )


def aggregate_krum(updates: UpdatesLike, f: int) -> AggregationResult:
    """
    Return the single update with the lowest Krum score.

    Raises:
        ConstraintViolation: if 2 + 2f >= n.
    """
    stacked = as_update_set(updates)
    n = stacked.shape[0]
    check_krum_constraint(f, n)

    matrix = pairwise_sq_distances(stacked)
    scored, warnings = score_clients(matrix, [f] * n)
    winner = _argmin_client(scored)
    return AggregationResult(
        aggregate=stacked[winner].copy(),
        selected_index=winner,
        averaged_indices=(winner,),
        warnings=warnings,
    )


def aggregate_mkrum(updates: UpdatesLike, f: int) -> AggregationResult:
    """
    Krum winner, then the mean of the n - f updates closest to it (winner included).
    """
    stacked = as_update_set(updates)
    n = stacked.shape[0]
    check_krum_constraint(f, n)

    matrix = pairwise_sq_distances(stacked)
    scored, warnings = score_clients(matrix, [f] * n)
    winner = _argmin_client(scored)
    chosen = nearest_indices(matrix, winner, n - f)
    return AggregationResult(
        aggregate=stacked[list(chosen)].mean(axis=0),
        selected_index=winner,
        averaged_indices=chosen,
        warnings=warnings,
    )


def _estimate_all(matrix: np.ndarray, use_filter: bool) -> List[ByzantineEstimate]:
    return [estimate_f(sorted_row(matrix, i), use_filter=use_filter) for i in range(matrix.shape[0])]


def aggregate_rkrum(updates: UpdatesLike) -> AggregationResult:
    """
    Krum with f estimated per client by SSE segmentation of the raw sorted row.
    """
    stacked = as_update_set(updates, min_clients=3)
    matrix = pairwise_sq_distances(stacked)
    estimates = _estimate_all(matrix, use_filter=False)
    scored, warnings = score_clients(matrix, [e.f_hat for e in estimates])
    winner = _argmin_client(scored)
    logger.debug("rKrum winner %d (f_hat=%d)", winner, estimates[winner].f_hat)
    return AggregationResult(
        aggregate=stacked[winner].copy(),
        selected_index=winner,
        averaged_indices=(winner,),
        estimates=estimates,
        warnings=warnings,
    )


def aggregate_arkrum(updates: UpdatesLike, use_filter: bool = True, fixed_f: Optional[int] = None) -> AggregationResult:
    """
    Parameter-free Krum with extreme-value filtering and neighbour averaging.

    1. pairwise squared distances
    2. per client: sort the row, filter extremes, estimate f_hat_i, then score
       the unfiltered row over max(1, n - f_hat_i - 2) neighbours
    3. winner i* = lowest score
    4. average the max(1, n - f_hat_{i*}) updates nearest to u_{i*}

    Args:
        updates: (n, d) client updates.
        use_filter: disable to skip the median filter (plain SSE estimate).
        fixed_f: bypass estimation and use this f for every client; with
            use_filter=False this reproduces Multi-Krum.
    """
    stacked = as_update_set(updates, min_clients=3)
    n = stacked.shape[0]
    matrix = pairwise_sq_distances(stacked)

    if fixed_f is None:
        estimates = _estimate_all(matrix, use_filter=use_filter)
    else:
        estimates = [
            ByzantineEstimate(f_hat=fixed_f, removed_by_filter=0, sse_change_point=n - 1 - fixed_f,
                              left_sse=0.0, right_sse=0.0)
            for _ in range(n)
        ]

    scored, warnings = score_clients(matrix, [e.f_hat for e in estimates])
    winner = _argmin_client(scored)
    m = max(1, n - estimates[winner].f_hat)
    chosen = nearest_indices(matrix, winner, m)
    logger.debug("ArKrum winner %d (f_hat=%d), averaging %d updates", winner, estimates[winner].f_hat, m)
    return AggregationResult(
        aggregate=stacked[list(chosen)].mean(axis=0),
        selected_index=winner,
        averaged_indices=chosen,
        estimates=estimates,
        warnings=warnings,
    )


def _run_mean(updates, known_f=None, use_filter=True):
    return aggregate_mean(updates)


def _run_krum(updates, known_f=None, use_filter=True):
    return aggregate_krum(updates, known_f)


def _run_mkrum(updates, known_f=None, use_filter=True):
    return aggregate_mkrum(updates, known_f)


def _run_rkrum(updates, known_f=None, use_filter=True):
    return aggregate_rkrum(updates)


def _run_arkrum(updates, known_f=None, use_filter=True):
    return aggregate_arkrum(updates, use_filter=use_filter)


# name -> callable(updates, known_f=..., use_filter=...)
AGGREGATORS: Dict[str, Callable[..., AggregationResult]] = {
    "mean": _run_mean,
    "krum": _run_krum,
    "mkrum": _run_mkrum,
    "rkrum": _run_rkrum,
    "arkrum": _run_arkrum,
}

KNOWN_F_AGGREGATORS = {"krum", "mkrum"}
