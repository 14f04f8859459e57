"""Area-based camera selection with shortest-path switch smoothing.

Each frame's camera score is the visible area of the target (oracle
visibility on synthetic data).  Smoothing finds the label path through the
(time x camera) lattice minimizing per-frame regret plus a penalty per cut.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SwitchGraphConfig:
    switch_penalty: float = 0.5
    score_source: str = "visibility"

    def __post_init__(self):
        lam = self.switch_penalty
        if math.isnan(lam) or lam < 0:
            raise ValueError(f"switch_penalty must be >= 0 or inf, got {lam}")
        if self.score_source not in ("visibility", "probabilities"):
            raise ValueError(f"score_source must be 'visibility' or 'probabilities', got {self.score_source!r}")


def _check_scores(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] < 1 or s.shape[1] < 1:
        raise ValueError(f"scores must be a non-empty [T, N] array, got shape {s.shape}")
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    return s


def area_select(scores) -> np.ndarray:
    """Per-frame argmax, lowest camera index on ties."""
    return np.argmax(_check_scores(scores), axis=1)


def path_cost(scores, labels, switch_penalty: float) -> float:
    s = _check_scores(scores)
    labels = np.asarray(labels)
    regret = s.max(axis=1) - s[np.arange(len(s)), labels]
    switches = int(np.count_nonzero(labels[1:] != labels[:-1]))
    return float(regret.sum() + (switch_penalty * switches if switches else 0.0))


def dijkstra_smooth(scores, cfg: SwitchGraphConfig | float = SwitchGraphConfig()) -> np.ndarray:
    """Minimum-cost label path; among equal-cost paths the lexicographically smallest.

    Dijkstra runs from a virtual sink backwards over the lattice so every node
    knows its cost-to-go; the path is then read forwards, taking the lowest
    camera index that stays on an optimal path.
    """
    lam = cfg.switch_penalty if isinstance(cfg, SwitchGraphConfig) else float(cfg)
    if math.isnan(lam) or lam < 0:
        raise ValueError(f"switch_penalty must be >= 0 or inf, got {lam}")
    s = _check_scores(scores)
    steps, N = s.shape
    regret = s.max(axis=1, keepdims=True) - s
    if math.isinf(lam):
        totals = regret.sum(axis=0)
        return np.full(steps, int(np.argmin(totals)), dtype=np.int64)

    # cost_to_go[t, n]: regret of frames t..T-1 on the best continuation from (t, n)
    cost_to_go = np.full((steps, N), np.inf)
    done = np.zeros((steps, N), dtype=bool)
    heap = [(regret[steps - 1, n], steps - 1, n) for n in range(N)]
    heapq.heapify(heap)
    while heap:
        d, t, n = heapq.heappop(heap)
        if done[t, n]:
            continue
        done[t, n] = True
        cost_to_go[t, n] = d
        if t == 0:
            continue
        for m in range(N):
            if done[t - 1, m]:
                continue
            nd = regret[t - 1, m] + ((lam if m != n else 0.0) + d)
            if nd < cost_to_go[t - 1, m]:
                cost_to_go[t - 1, m] = nd
                heapq.heappush(heap, (nd, t - 1, m))

    labels = np.zeros(steps, dtype=np.int64)
    labels[0] = int(np.argmin(cost_to_go[0]))
    for t in range(1, steps):
        prev = labels[t - 1]
        step_cost = cost_to_go[t] + np.where(np.arange(N) != prev, lam, 0.0)
        labels[t] = int(np.argmin(step_cost))
    return labels
