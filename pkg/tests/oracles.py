"""Slow, obviously-correct reference implementations used only by tests."""
from __future__ import annotations

import itertools
import math
from collections import Counter
from fractions import Fraction

import numpy as np


def ward_partition(centroids: np.ndarray, k_min: int) -> list[frozenset[int]]:
    """Greedy Ward agglomeration recomputing every linkage from cluster members."""
    centroids = np.asarray(centroids, dtype=np.float64)
    clusters = [frozenset([i]) for i in range(len(centroids))]
    if len(clusters) < k_min:
        return [frozenset(range(len(centroids)))]

    def link(a, b):
        ma = centroids[sorted(a)].mean(axis=0)
        mb = centroids[sorted(b)].mean(axis=0)
        return math.sqrt(len(a) * len(b) / (len(a) + len(b))) * float(np.linalg.norm(ma - mb))

    while True:
        if all(len(c) >= k_min for c in clusters):
            return clusters
        pairs = [(link(a, b), i, j) for (i, a), (j, b) in itertools.combinations(enumerate(clusters), 2)]
        _, i, j = min(pairs)
        merged = clusters[i] | clusters[j]
        clusters = [c for k, c in enumerate(clusters) if k not in (i, j)] + [merged]


def bfs_connected(nodes, pairs) -> bool:
    nodes = list(nodes)
    seen = {nodes[0]}
    frontier = [nodes[0]]
    while frontier:
        u = frontier.pop()
        for a, b in pairs:
            for x, y in ((a, b), (b, a)):
                if x == u and y not in seen:
                    seen.add(y)
                    frontier.append(y)
    return len(seen) == len(nodes)


def _comb2(n: int) -> int:
    return n * (n - 1) // 2


def ari_pairs(y, c) -> float:
    """Adjusted Rand index by enumerating every pair of items, in exact rationals."""
    y, c = list(y), list(c)
    n = len(y)
    both = same_y = same_c = 0
    for i in range(n):
        for j in range(i + 1, n):
            sy, sc = y[i] == y[j], c[i] == c[j]
            same_y += sy
            same_c += sc
            both += sy and sc
    total = _comb2(n)
    expected = Fraction(same_y * same_c, total)
    max_idx = Fraction(same_y + same_c, 2)
    if max_idx == expected:
        return 1.0
    return float((both - expected) / (max_idx - expected))


def nmi_counts(y, c) -> float:
    """Arithmetic-mean normalized mutual information from raw counters."""
    y, c = list(y), list(c)
    n = len(y)
    py, pc, pj = Counter(y), Counter(c), Counter(zip(y, c))
    hy = -sum(v / n * math.log(v / n) for v in py.values())
    hc = -sum(v / n * math.log(v / n) for v in pc.values())
    mi = sum(v / n * math.log((v / n) / (py[a] / n * pc[b] / n)) for (a, b), v in pj.items())
    if hy == 0.0 and hc == 0.0:
        return 1.0
    denom = 0.5 * (hy + hc)
    return 0.0 if denom == 0 else mi / denom


def acc_permutations(y, c) -> float:
    """Clustering accuracy maximized over every injective cluster -> label map."""
    y, c = list(y), list(c)
    labels, clusters = sorted(set(y)), sorted(set(c))
    pad = labels + [None] * max(0, len(clusters) - len(labels))
    best = 0
    for perm in itertools.permutations(pad, len(clusters)):
        m = dict(zip(clusters, perm))
        best = max(best, sum(m[ci] == yi for yi, ci in zip(y, c)))
    return best / len(y)


def sinkhorn_reference(scores, eps: float, n_iters: int) -> np.ndarray:
    """Textbook Sinkhorn-Knopp in the linear domain (scores must be mild)."""
    q = np.exp(np.asarray(scores, dtype=np.float64) / eps)
    b, k = q.shape
    q = q / q.sum(axis=1, keepdims=True)
    for _ in range(n_iters):
        q = q / q.sum(axis=0, keepdims=True) * (b / k)
        q = q / q.sum(axis=1, keepdims=True)
    return q
