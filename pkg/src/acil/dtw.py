"""Dynamic time warping over state sequences.

The cost of a warping path is the sum of Euclidean distances between the
paired states; moves advance the first index, the second, or both by one.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

BRUTE_FORCE_MAX_LEN = 8


@dataclass(frozen=True)
class NormalizationStats:
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def from_sequence(cls, seq) -> "NormalizationStats":
        seq = np.asarray(seq, dtype=float)
        return cls(seq.min(axis=0), seq.max(axis=0))


def minmax_normalize(seq, stats: NormalizationStats):
    """Per-dimension ``(x - lo) / (hi - lo)``; constant dimensions map to 0."""
    seq = np.asarray(seq, dtype=float)
    span = stats.hi - stats.lo
    if seq.shape[-1] != span.shape[-1]:
        raise ValueError("sequence and stats dimensions differ")
    flat = span == 0
    safe = np.where(flat, 1.0, span)
    return np.where(flat, 0.0, (seq - stats.lo) / safe)


@dataclass(frozen=True)
class DtwResult:
    cost: float
    path: list[tuple[int, int]]


def _as_seq(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x


def pairwise_distances(x, y):
    return np.sqrt(np.sum((x[..., :, None, :] - y[..., None, :, :]) ** 2, axis=-1))


def accumulated_cost(delta):
    """DP table ``D[i, j]`` for a (possibly batched) distance matrix.

    Cells on one anti-diagonal are independent, so each diagonal is filled
    with a single vectorised update.
    """
    m, n = delta.shape[-2:]
    Dp = np.full(delta.shape[:-2] + (m + 1, n + 1), np.inf)
    Dp[..., 0, 0] = 0.0
    for k in range(m + n - 1):
        i = np.arange(max(0, k - n + 1), min(k, m - 1) + 1)
        j = k - i
        best = np.minimum(np.minimum(Dp[..., i, j], Dp[..., i, j + 1]), Dp[..., i + 1, j])
        Dp[..., i + 1, j + 1] = delta[..., i, j] + best
    return Dp[..., 1:, 1:]


def backtrack(D) -> list[tuple[int, int]]:
    """Recover a path; ties prefer diagonal, then vertical (i - 1), then horizontal."""
    i, j = D.shape[0] - 1, D.shape[1] - 1
    path = [(i, j)]
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            diag, vert, horiz = D[i - 1, j - 1], D[i - 1, j], D[i, j - 1]
            if diag <= vert and diag <= horiz:
                i, j = i - 1, j - 1
            elif vert <= horiz:
                i -= 1
            else:
                j -= 1
        path.append((i, j))
    path.reverse()
    return path


def dtw_distance(seq_a, seq_b) -> DtwResult:
    """Minimum-cost warping between two sequences of equal state dimension."""
    x, y = _as_seq(seq_a), _as_seq(seq_b)
    if len(x) == 0 or len(y) == 0:
        raise ValueError("DTW needs non-empty sequences")
    if x.shape[1] != y.shape[1]:
        raise ValueError("DTW sequences have different dimensions")
    D = accumulated_cost(pairwise_distances(x, y))
    return DtwResult(float(D[-1, -1]), backtrack(D))


def dtw_cost_batch(seqs, ref):
    """DTW cost of each sequence in ``seqs`` (shape ``(P, m, d)``) against ``ref``."""
    seqs = np.asarray(seqs, dtype=float)
    ref = _as_seq(ref)
    D = accumulated_cost(pairwise_distances(seqs, ref[None]))
    return D[:, -1, -1]


def iter_warping_paths(m: int, n: int):
    """Every monotone path from (0, 0) to (m - 1, n - 1)."""

    def rec(i, j):
        if i == m - 1 and j == n - 1:
            yield [(i, j)]
            return
        for di, dj in ((1, 1), (1, 0), (0, 1)):
            ni, nj = i + di, j + dj
            if ni < m and nj < n:
                for tail in rec(ni, nj):
                    yield [(i, j)] + tail

    yield from rec(0, 0)


def dtw_bruteforce(seq_a, seq_b) -> float:
    """Exact DTW by enumerating every warping path; test oracle only."""
    x, y = _as_seq(seq_a), _as_seq(seq_b)
    m, n = len(x), len(y)
    if m == 0 or n == 0:
        raise ValueError("DTW needs non-empty sequences")
    if m > BRUTE_FORCE_MAX_LEN or n > BRUTE_FORCE_MAX_LEN:
        raise ValueError(f"brute force refuses sequences longer than {BRUTE_FORCE_MAX_LEN}")
    best = np.inf
    for path in iter_warping_paths(m, n):
        cost = 0.0
        for i, j in path:
            cost += float(np.linalg.norm(x[i] - y[j]))
        best = min(best, cost)
    return best


def is_valid_path(path, m: int, n: int) -> bool:
    if not path or path[0] != (0, 0) or path[-1] != (m - 1, n - 1):
        return False
    for (i0, j0), (i1, j1) in itertools.pairwise(path):
        if (i1 - i0, j1 - j0) not in ((1, 0), (0, 1), (1, 1)):
            return False
    return True


def progression_advancement(path, row: int = 1) -> int:
    """1 if plan state ``row`` aligns past the expert state that row ``row - 1`` first touched.

    With the default ``row=1`` this asks whether the first planned next state
    is matched beyond the current expert state.
    """
    cols = [j for i, j in path if i == row]
    if not cols:
        return 0
    prev = [j for i, j in path if i == row - 1]
    return 1 if min(cols) > min(prev) else 0
