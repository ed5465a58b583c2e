"""Intelligibility and fidelity metrics: CER, unvoiced collapsing, and a
from-scratch FastDTW with an exact fallback for short sequences."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

AlignmentPath = list[tuple[int, int]]

EXACT_DTW_MAX = 32   # at or below this length, skip coarsening entirely


def levenshtein(hyp, ref) -> int:
    """Edit distance with unit costs, O(len(ref)) memory."""
    hyp, ref = list(hyp), list(ref)
    if not hyp:
        return len(ref)
    prev = list(range(len(ref) + 1))
    for i, h in enumerate(hyp, start=1):
        cur = [i] + [0] * len(ref)
        for j, r in enumerate(ref, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (h != r))
        prev = cur
    return prev[-1]


def cer(hyp, ref) -> float:
    """Levenshtein(hyp, ref) / |ref|; symbols are compared by equality only."""
    ref = list(ref)
    if not ref:
        raise ValueError("reference must be nonempty")
    return levenshtein(hyp, ref) / len(ref)


def collapse_unvoiced(frames: np.ndarray, energy_threshold: float) -> np.ndarray:
    """Replace each maximal run of low-energy frames by the run's mean frame."""
    if energy_threshold < 0:
        raise ValueError("threshold must be >= 0")
    if frames.shape[0] == 0:
        return frames
    quiet = np.linalg.norm(frames, axis=1) < energy_threshold
    out: list[np.ndarray] = []
    i = 0
    n = frames.shape[0]
    while i < n:
        if not quiet[i]:
            out.append(frames[i])
            i += 1
            continue
        j = i
        while j < n and quiet[j]:
            j += 1
        out.append(frames[i:j].mean(axis=0))
        i = j
    return np.stack(out)


def _pair_cost(a: np.ndarray, b: np.ndarray) -> float:
    d = a.astype(np.float64) - b.astype(np.float64)
    return float(d @ d)


def dtw_exact(a: np.ndarray, b: np.ndarray,
              window: set[tuple[int, int]] | None = None,
              ) -> tuple[float, AlignmentPath]:
    """Full O(nm) DTW over squared L2 frame distances, optionally windowed.

    The window always admits (0,0) and (n-1,m-1); steps are down/right/diag.
    """
    n, m = a.shape[0], b.shape[0]
    if n == 0 or m == 0:
        raise ValueError("sequences must be nonempty")
    INF = np.inf
    cost = np.full((n, m), INF)
    move = np.full((n, m), -1, dtype=np.int8)  # 0 diag, 1 up(i-1), 2 left(j-1)

    def admissible(i, j):
        return window is None or (i, j) in window or (i, j) in ((0, 0), (n - 1, m - 1))

    d2 = None
    if window is None:
        diff = a[:, None, :].astype(np.float64) - b[None, :, :].astype(np.float64)
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
    for i in range(n):
        for j in range(m):
            if not admissible(i, j):
                continue
            d = d2[i, j] if d2 is not None else _pair_cost(a[i], b[j])
            if i == 0 and j == 0:
                cost[i, j] = d
                move[i, j] = 0
                continue
            best, arg = INF, -1
            if i > 0 and j > 0 and cost[i - 1, j - 1] < best:
                best, arg = cost[i - 1, j - 1], 0
            if i > 0 and cost[i - 1, j] < best:
                best, arg = cost[i - 1, j], 1
            if j > 0 and cost[i, j - 1] < best:
                best, arg = cost[i, j - 1], 2
            if arg >= 0:
                cost[i, j] = best + d
                move[i, j] = arg
    i, j = n - 1, m - 1
    path = [(i, j)]
    while (i, j) != (0, 0):
        arg = move[i, j]
        if arg == 0:
            i, j = i - 1, j - 1
        elif arg == 1:
            i -= 1
        else:
            j -= 1
        path.append((i, j))
    path.reverse()
    return float(cost[n - 1, m - 1]), path


def _half(x: np.ndarray) -> np.ndarray:
    n = x.shape[0] // 2
    paired = x[: 2 * n].reshape(n, 2, -1).mean(axis=1)
    if x.shape[0] % 2:
        paired = np.concatenate([paired, x[-1:][:]], axis=0)
    return paired


def _expand_window(path: AlignmentPath, n: int, m: int, radius: int
                   ) -> set[tuple[int, int]]:
    # each coarse cell covers a 2x2 block at fine resolution; the projected
    # path is then widened by `radius` cells in every direction
    projected: set[tuple[int, int]] = set()
    for (ci, cj) in path:
        for fi in (2 * ci, 2 * ci + 1):
            for fj in (2 * cj, 2 * cj + 1):
                projected.add((fi, fj))
    window: set[tuple[int, int]] = set()
    for (i, j) in projected:
        for di in range(-radius, radius + 1):
            for dj in range(-radius, radius + 1):
                fi, fj = i + di, j + dj
                if 0 <= fi < n and 0 <= fj < m:
                    window.add((fi, fj))
    return window


def fastdtw(a: np.ndarray, b: np.ndarray, radius: int = 1,
            ) -> tuple[float, AlignmentPath]:
    """Recursive-coarsening approximate DTW (exact when radius covers all).

    Cost is the sum of squared L2 distances along the returned path, which is
    always a valid alignment; the approximation can only overshoot exact DTW.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    n, m = a.shape[0], b.shape[0]
    if n == 0 or m == 0:
        raise ValueError("sequences must be nonempty")
    if radius >= max(n, m):
        return dtw_exact(a, b)
    min_size = radius + 2
    if n <= min_size or m <= min_size:
        return dtw_exact(a, b)
    _, coarse_path = fastdtw(_half(a), _half(b), radius)
    window = _expand_window(coarse_path, n, m, radius)
    return dtw_exact(a, b, window=window)


def dtw_mse(pred: np.ndarray, ref: np.ndarray, energy_threshold: float = 0.0,
            radius: int = 1) -> float:
    """Mean per-dimension squared error along the DTW path after collapsing
    unvoiced runs in both sequences."""
    p = collapse_unvoiced(pred, energy_threshold)
    r = collapse_unvoiced(ref, energy_threshold)
    if max(p.shape[0], r.shape[0]) <= EXACT_DTW_MAX:
        cost, path = dtw_exact(p, r)
    else:
        cost, path = fastdtw(p, r, radius)
    d_mel = pred.shape[1]
    return cost / (len(path) * d_mel)


@dataclass
class MetricReport:
    """Aggregated per-language evaluation results."""

    language_id: str
    n: int
    cer: float
    cer_ex: float
    dtw_mse: float
    per_sample: dict[str, list[float]] = field(default_factory=dict)

    @classmethod
    def from_samples(cls, language_id: str, cers: list[float],
                     cers_ex: list[float], mses: list[float]) -> "MetricReport":
        mean = lambda xs: float(np.mean(xs)) if xs else float("nan")
        return cls(language_id, len(cers), mean(cers), mean(cers_ex), mean(mses),
                   per_sample={"cer": cers, "cer_ex": cers_ex, "dtw_mse": mses})
