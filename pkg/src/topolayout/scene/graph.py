"""Node abstraction, Ward partitioning and connectivity-preserving edge sampling."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..numerics.rng import seeded_rng
from .descriptors import EdgeGeometry, SpatialDescriptor, compute_descriptor, relative_geometry
from .synth import LabeledPointCloud


@dataclass
class SceneNode:
    id: int
    points: np.ndarray
    descriptor: SpatialDescriptor
    category_id: int = -1


@dataclass
class SubgraphSample:
    nodes: list[SceneNode]
    edges: list[tuple[int, int, EdgeGeometry]]
    anchor: int
    meta: dict = field(default_factory=dict)

    @property
    def node_ids(self) -> list[int]:
        return [n.id for n in self.nodes]

    def node(self, node_id: int) -> SceneNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def edge_pairs(self) -> list[tuple[int, int]]:
        return [(s, d) for s, d, _ in self.edges]


def abstract_nodes(cloud: LabeledPointCloud, tau_pts: int = 512, excluded_ids=frozenset()) -> list[SceneNode]:
    if tau_pts < 1:
        raise ValueError("tau_pts must be >= 1")
    nodes = []
    for inst in np.unique(cloud.instance_ids):
        inst = int(inst)
        if inst in excluded_ids:
            continue
        pts = cloud.points[cloud.instance_ids == inst]
        if len(pts) < tau_pts:
            continue
        nodes.append(SceneNode(inst, pts.copy(), compute_descriptor(pts), cloud.categories.get(inst, -1)))
    return nodes


def _ward_merge_sequence(centroids: np.ndarray):
    """Yield partitions (lists of member-index lists) from singletons to one cluster.

    Distances follow d = sqrt(|A||B|/(|A|+|B|)) * ||mu_A - mu_B||, maintained via
    the Lance-Williams recurrence on squared distances. Ties go to the
    lexicographically first (row, col) pair of the current cluster list.
    """
    clusters = [[i] for i in range(len(centroids))]
    sizes = [1] * len(centroids)
    diff = centroids[:, None, :] - centroids[None, :, :]
    d2 = 0.5 * (diff ** 2).sum(-1)
    yield [list(c) for c in clusters]
    while len(clusters) > 1:
        m = len(clusters)
        best, bi, bj = math.inf, -1, -1
        for i in range(m):
            for j in range(i + 1, m):
                if d2[i, j] < best:
                    best, bi, bj = d2[i, j], i, j
        ni, nj = sizes[bi], sizes[bj]
        new_row = np.empty(m)
        for k in range(m):
            nk = sizes[k]
            new_row[k] = ((ni + nk) * d2[bi, k] + (nj + nk) * d2[bj, k] - nk * d2[bi, bj]) / (ni + nj + nk)
        clusters[bi] = clusters[bi] + clusters[bj]
        sizes[bi] = ni + nj
        d2[bi, :] = new_row
        d2[:, bi] = new_row
        d2[bi, bi] = 0.0
        del clusters[bj], sizes[bj]
        d2 = np.delete(np.delete(d2, bj, axis=0), bj, axis=1)
        yield [list(c) for c in clusters]


def partition_subgraphs(nodes: list[SceneNode], k_min: int = 3) -> list[set[int]]:
    """First partition along the Ward merge sequence whose clusters all hold >= k_min nodes."""
    if k_min < 1:
        raise ValueError("k_min must be >= 1")
    if not nodes:
        raise ValueError("need at least one node")
    ids = [n.id for n in nodes]
    if len(nodes) < k_min:
        return [set(ids)]
    cents = np.array([n.descriptor.centroid for n in nodes])
    for part in _ward_merge_sequence(cents):
        if all(len(c) >= k_min for c in part):
            return [{ids[i] for i in c} for c in part]
    raise AssertionError("unreachable: the final single cluster always qualifies")


def _random_spanning_tree(nodes: list[int], rng: np.random.Generator) -> list[tuple[int, int]]:
    """Wilson's loop-erased random walk on the complete graph over ``nodes``."""
    n = len(nodes)
    order = rng.permutation(n)
    in_tree = np.zeros(n, dtype=bool)
    in_tree[order[0]] = True
    nxt = np.full(n, -1)
    for start in order[1:]:
        u = start
        while not in_tree[u]:
            v = int(rng.integers(n - 1))
            nxt[u] = v if v < u else v + 1
            u = nxt[u]
        u = start
        while not in_tree[u]:
            in_tree[u] = True
            u = nxt[u]
    return [(nodes[i], nodes[nxt[i]]) for i in range(n) if nxt[i] >= 0]


def target_edge_count(n: int, rho: float) -> int:
    return max(n - 1, math.floor((1.0 - rho) * n * (n - 1)))


def generate_edges(node_ids, rho: float, seed: int) -> list[tuple[int, int]]:
    """Random spanning tree with random orientations, topped up with uniform extra edges."""
    nodes = sorted(int(i) for i in node_ids)
    n = len(nodes)
    if n < 2:
        raise ValueError("edge generation needs at least 2 nodes")
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    rng = seeded_rng(seed, 0xED6E)
    tree = []
    for a, b in _random_spanning_tree(nodes, rng):
        tree.append((a, b) if rng.random() < 0.5 else (b, a))
    n_target = math.floor((1.0 - rho) * n * (n - 1))
    n_rem = max(0, n_target - len(tree))
    tree_set = set(tree)
    rest = [(a, b) for a in nodes for b in nodes if a != b and (a, b) not in tree_set]
    extra = [rest[i] for i in sorted(rng.choice(len(rest), size=n_rem, replace=False))] if n_rem else []
    return sorted(tree + extra)


def undirected_hops(node_ids, pairs, source: int) -> dict[int, int]:
    """BFS hop distances over the undirected skeleton."""
    adj: dict[int, list[int]] = {i: [] for i in node_ids}
    for a, b in pairs:
        adj[a].append(b)
        adj[b].append(a)
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def is_weakly_connected(node_ids, pairs) -> bool:
    node_ids = list(node_ids)
    return len(undirected_hops(node_ids, pairs, node_ids[0])) == len(node_ids)


def select_anchor(sample: SubgraphSample, seed: int) -> int:
    if not sample.nodes:
        raise ValueError("empty sample")
    rng = seeded_rng(seed, 0xA2C)
    return sample.nodes[int(rng.integers(len(sample.nodes)))].id


def make_sample(nodes: list[SceneNode], pairs, anchor: int) -> SubgraphSample:
    by_id = {n.id: n for n in nodes}
    edges = [(a, b, relative_geometry(by_id[a].descriptor, by_id[b].descriptor)) for a, b in pairs]
    return SubgraphSample(list(nodes), edges, anchor)


def validate_sample(sample: SubgraphSample, k_min: int = 1) -> None:
    ids = sample.node_ids
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate node ids")
    if len(ids) < k_min:
        raise ValueError(f"sample has {len(ids)} nodes < k_min={k_min}")
    if sample.anchor not in ids:
        raise ValueError("anchor is not a node of the sample")
    pairs = sample.edge_pairs()
    if any(a == b for a, b in pairs):
        raise ValueError("self-loop edge")
    if len(set(pairs)) != len(pairs):
        raise ValueError("duplicate directed edge")
    if any(a not in ids or b not in ids for a, b in pairs):
        raise ValueError("edge endpoint is not a node")
    if len(ids) > 1 and not is_weakly_connected(ids, pairs):
        raise ValueError("undirected skeleton is disconnected")
