"""Clustering metrics over frozen embeddings and layout-recovery error."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .numerics.rng import seeded_rng
from .scene.descriptors import compute_descriptor


def kmeans(features: np.ndarray, k: int, seed: int = 0, max_iters: int = 100) -> np.ndarray:
    """k-means++ seeding followed by Lloyd iterations to a fixpoint."""
    x = np.asarray(features, dtype=np.float64)
    n = len(x)
    if k < 1 or n < k:
        raise ValueError(f"kmeans needs n >= k >= 1 (n={n}, k={k})")
    rng = seeded_rng(seed, 0x4B3)
    centres = np.empty((k, x.shape[1]))
    centres[0] = x[rng.integers(n)]
    d2 = ((x - centres[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        i = int(rng.choice(n, p=d2 / total)) if total > 0 else int(rng.integers(n))
        centres[c] = x[i]
        d2 = np.minimum(d2, ((x - centres[c]) ** 2).sum(axis=1))
    assign = np.full(n, -1)
    for _ in range(max_iters):
        dist = ((x[:, None, :] - centres[None, :, :]) ** 2).sum(axis=2)
        new = dist.argmin(axis=1)
        if np.array_equal(new, assign):
            break
        assign = new
        for c in range(k):
            members = x[assign == c]
            if len(members):
                centres[c] = members.mean(axis=0)
    return assign


def contingency(y, c) -> np.ndarray:
    y = np.asarray(y)
    c = np.asarray(c)
    if y.shape != c.shape:
        raise ValueError("label and assignment vectors differ in length")
    _, yi = np.unique(y, return_inverse=True)
    _, ci = np.unique(c, return_inverse=True)
    table = np.zeros((yi.max(initial=-1) + 1, ci.max(initial=-1) + 1), dtype=np.int64)
    np.add.at(table, (yi, ci), 1)
    return table


def cluster_acc(y, c) -> float:
    table = contingency(y, c)
    if table.sum() == 0:
        raise ValueError("empty labelling")
    size = max(table.shape)
    padded = np.zeros((size, size), dtype=np.int64)
    padded[:table.shape[0], :table.shape[1]] = table
    rows, cols = linear_sum_assignment(padded, maximize=True)
    return padded[rows, cols].sum() / table.sum()


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(y, c) -> float:
    """2 I(Y;C) / (H(Y) + H(C)), natural logs; 1.0 when both sides are one cluster."""
    table = contingency(y, c).astype(np.float64)
    n = table.sum()
    hy = _entropy(table.sum(axis=1))
    hc = _entropy(table.sum(axis=0))
    if hy + hc == 0.0:
        return 1.0
    pij = table / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0)) / n ** 2
    nz = pij > 0
    mi = float((pij[nz] * np.log(pij[nz] / outer[nz])).sum())
    return max(0.0, min(1.0, 2.0 * mi / (hy + hc)))


def _pairs(x) -> int:
    return sum(int(v) * (int(v) - 1) // 2 for v in np.ravel(x))


def ari(y, c) -> float:
    """Pair-counting ARI evaluated as one ratio of exact integers (correctly rounded)."""
    table = contingency(y, c)
    n = int(table.sum())
    if n < 2:
        raise ValueError("ARI needs at least two items")
    idx = _pairs(table)
    a = _pairs(table.sum(axis=1))
    b = _pairs(table.sum(axis=0))
    total = n * (n - 1) // 2
    # (idx - a*b/total) / ((a+b)/2 - a*b/total), scaled by 2*total
    num = 2 * (total * idx - a * b)
    den = total * (a + b) - 2 * a * b
    if den == 0:
        # both partitions trivial in the same way: perfect agreement
        return 1.0
    return num / den


def relation_labels(r: np.ndarray) -> np.ndarray:
    """Synthetic predicate stand-in: dominant centroid-offset axis and its sign (6 bins)."""
    dpos = np.asarray(r, dtype=np.float64)[:, :3]
    axis = np.abs(dpos).argmax(axis=1)
    positive = dpos[np.arange(len(dpos)), axis] > 0
    return 2 * axis + positive.astype(np.int64)


@dataclass
class ClusterScores:
    nmi: float
    ari: float
    acc: float


def evaluate_embeddings(features: np.ndarray, labels: np.ndarray, seed: int = 0) -> ClusterScores:
    labels = np.asarray(labels)
    k = len(np.unique(labels))
    assign = kmeans(features, k, seed)
    return ClusterScores(nmi(labels, assign), ari(labels, assign), cluster_acc(labels, assign))


@dataclass
class LayoutError:
    centroid: dict[int, float]
    extent: dict[int, float]
    mean_centroid: float
    mean_extent: float


def layout_error(recovered: dict[int, np.ndarray], sample) -> LayoutError:
    """Per-node centroid distance and |log(L_rec / L_gt)| against ground truth."""
    gt_ids = set(sample.node_ids)
    if set(recovered) != gt_ids:
        raise ValueError(f"recovered ids {sorted(recovered)} do not match sample ids {sorted(gt_ids)}")
    cen, ext = {}, {}
    for node in sample.nodes:
        rec = compute_descriptor(recovered[node.id])
        cen[node.id] = float(np.linalg.norm(rec.centroid - node.descriptor.centroid))
        ext[node.id] = float(abs(np.log(max(rec.max_length, 1e-6) / max(node.descriptor.max_length, 1e-6))))
    return LayoutError(cen, ext, float(np.mean(list(cen.values()))), float(np.mean(list(ext.values()))))


def scene_extent(sample) -> float:
    """Longest side of the axis-aligned box around every point of the sample."""
    pts = np.concatenate([n.points for n in sample.nodes])
    return float((pts.max(axis=0) - pts.min(axis=0)).max())
