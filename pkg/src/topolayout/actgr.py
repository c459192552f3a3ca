"""Anchor-conditioned topological reasoning: encoders, anchor fusion and
recurrent GRU-wrapped message passing over a batch of subgraphs."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .numerics import autodiff as ad
from .numerics.autodiff import Tensor
from .numerics.nn import gru_cell, init_gru, init_mlp, mlp
from .numerics.params import ParamStore
from .numerics.rng import seeded_rng
from .scene.descriptors import SCALE_FLOOR
from .scene.graph import SubgraphSample, is_weakly_connected

GEOM_DIM = 11


@dataclass
class PropagationConfig:
    T: int = 3
    l_base: int = 2
    d: int = 64

    def __post_init__(self):
        if self.T < 0 or self.l_base < 1 or self.d < 1:
            raise ValueError("need T >= 0, l_base >= 1, d >= 1")


@dataclass(frozen=True)
class AnchorMode:
    variant: str = "single"  # single | multi | global | none
    k: int = 1

    @classmethod
    def parse(cls, text: str) -> "AnchorMode":
        text = text.strip()
        if text.startswith("multi"):
            k = int(text[text.index("(") + 1:text.index(")")]) if "(" in text else 2
            return cls("multi", k)
        if text not in ("single", "global", "none"):
            raise ValueError(f"unknown anchor mode {text!r}")
        return cls(text, 1)


def erf_reachable(hops: int, cfg: PropagationConfig) -> bool:
    if hops < 0:
        raise ValueError("hop distance must be >= 0")
    return cfg.T * cfg.l_base >= hops


def condition_set(sample: SubgraphSample, mode: AnchorMode, seed: int = 0) -> list[int]:
    """Node ids whose ground-truth descriptor is revealed, in node order."""
    ids = sample.node_ids
    if mode.variant == "single":
        return [sample.anchor]
    if mode.variant == "global":
        return list(ids)
    if mode.variant == "none":
        return []
    if mode.k > len(ids) or mode.k < 1:
        raise ValueError(f"multi({mode.k}) anchors on a {len(ids)}-node sample")
    rng = seeded_rng(seed, 0x3A1)
    pick = set(rng.choice(len(ids), size=mode.k, replace=False).tolist())
    return [i for k, i in enumerate(ids) if k in pick]


@dataclass
class GraphBatch:
    """Disjoint union of subgraphs with contiguous per-node point blocks."""

    points: np.ndarray  # (P, 3) absolute
    point_offsets: np.ndarray  # (N+1,)
    descriptors: np.ndarray  # (N, 11)
    categories: np.ndarray  # (N,)
    node_sample: np.ndarray  # (N,)
    node_ids: np.ndarray  # (N,)
    src: np.ndarray  # (E,) global node index
    dst: np.ndarray
    r: np.ndarray  # (E, 11)
    edge_sample: np.ndarray  # (E,)
    anchor_idx: np.ndarray  # global indices of conditioned nodes
    n_samples: int

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_edges(self) -> int:
        return len(self.src)

    def node_keys(self) -> list[tuple[int, int]]:
        return list(zip(self.node_sample.tolist(), self.node_ids.tolist()))

    def edge_keys(self) -> list[tuple[int, int, int]]:
        return list(zip(self.edge_sample.tolist(), self.node_ids[self.src].tolist(), self.node_ids[self.dst].tolist()))


def collate(samples: list[SubgraphSample], anchors: list[list[int]] | None = None,
            check_connected: bool = False) -> GraphBatch:
    pts, offs, desc, cats, nsamp, nids = [], [0], [], [], [], []
    src, dst, r, esamp, anchor_idx = [], [], [], [], []
    for s_no, sample in enumerate(samples):
        if check_connected and len(sample.nodes) > 1 and not is_weakly_connected(sample.node_ids, sample.edge_pairs()):
            raise ValueError(f"sample {s_no} is disconnected")
        base = len(nids)
        local = {}
        for k, node in enumerate(sample.nodes):
            if len(node.points) == 0:
                raise ValueError(f"node {node.id} of sample {s_no} has no points")
            local[node.id] = base + k
            pts.append(node.points)
            offs.append(offs[-1] + len(node.points))
            desc.append(node.descriptor.to_array())
            cats.append(node.category_id)
            nsamp.append(s_no)
            nids.append(node.id)
        for a, b, geom in sample.edges:
            if a not in local or b not in local:
                raise ValueError(f"edge ({a},{b}) of sample {s_no} has a dangling endpoint")
            src.append(local[a])
            dst.append(local[b])
            r.append(geom.to_array())
            esamp.append(s_no)
        for a in (anchors[s_no] if anchors is not None else []):
            if a not in local:
                raise ValueError(f"anchor {a} is not a node of sample {s_no}")
            anchor_idx.append(local[a])
    return GraphBatch(
        points=np.concatenate(pts) if pts else np.zeros((0, 3)),
        point_offsets=np.asarray(offs, dtype=np.int64),
        descriptors=np.asarray(desc, dtype=np.float64).reshape(-1, GEOM_DIM),
        categories=np.asarray(cats, dtype=np.int64),
        node_sample=np.asarray(nsamp, dtype=np.int64),
        node_ids=np.asarray(nids, dtype=np.int64),
        src=np.asarray(src, dtype=np.int64),
        dst=np.asarray(dst, dtype=np.int64),
        r=np.asarray(r, dtype=np.float64).reshape(-1, GEOM_DIM),
        edge_sample=np.asarray(esamp, dtype=np.int64),
        anchor_idx=np.asarray(anchor_idx, dtype=np.int64),
        n_samples=len(samples),
    )


def init_actgr(store: ParamStore, cfg: PropagationConfig, rng: np.random.Generator) -> None:
    d = cfg.d
    init_mlp(store, "obj.point", [3, d, d], rng)
    init_mlp(store, "obj.head", [d, d, d], rng)
    init_mlp(store, "rel", [GEOM_DIM + 2 * d, d, d], rng)
    init_mlp(store, "fuse", [d + GEOM_DIM, d, d], rng)
    for layer in range(cfg.l_base):
        init_mlp(store, f"gnn.{layer}.msg", [2 * d + GEOM_DIM, d, d], rng)
        init_mlp(store, f"gnn.{layer}.merge", [2 * d, d, d], rng)
    init_gru(store, "gru", d, d, rng)
    init_mlp(store, "edge_upd", [3 * d + GEOM_DIM, d, d], rng)


def normalized_points(batch: GraphBatch) -> np.ndarray:
    """Each node's points centred on their mean and divided by their max extent."""
    offs = batch.point_offsets
    counts = np.diff(offs)
    seg = np.repeat(np.arange(len(counts)), counts)
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, seg, batch.points)
    centred = batch.points - (sums / counts[:, None])[seg]
    mx = np.maximum.reduceat(batch.points, offs[:-1], axis=0)
    mn = np.minimum.reduceat(batch.points, offs[:-1], axis=0)
    scale = np.maximum((mx - mn).max(axis=1), SCALE_FLOOR)
    return centred / scale[seg, None]


def encode_objects(p: Mapping[str, Tensor], batch: GraphBatch) -> Tensor:
    if np.any(np.diff(batch.point_offsets) <= 0):
        raise ValueError("every node needs at least one point")
    x = Tensor(normalized_points(batch))
    per_point = ad.relu(mlp(p, "obj.point", x, 2))
    pooled = ad.segment_max(per_point, batch.point_offsets)
    return mlp(p, "obj.head", pooled, 2)


def encode_edges(p: Mapping[str, Tensor], batch: GraphBatch, h: Tensor) -> Tensor:
    if batch.n_edges == 0:
        return Tensor(np.zeros((0, h.shape[1])))
    if batch.src.max() >= h.shape[0] or batch.dst.max() >= h.shape[0]:
        raise ValueError("edge endpoint outside node range")
    x = ad.concat([Tensor(batch.r), ad.take_rows(h, batch.src), ad.take_rows(h, batch.dst)], axis=1)
    return mlp(p, "rel", x, 2)


def fuse_anchor(p: Mapping[str, Tensor], h: Tensor, anchor_idx, s_gt) -> Tensor:
    """Replace anchor rows with MLP([h || s_gt]); all other rows pass through untouched."""
    anchor_idx = np.asarray(anchor_idx, dtype=np.int64)
    if len(anchor_idx) == 0:
        return h
    s_gt = np.asarray(s_gt, dtype=np.float64)
    if s_gt.shape != (len(anchor_idx), GEOM_DIM):
        raise ValueError(f"need one 11-value descriptor per anchor, got {s_gt.shape}")
    fused = mlp(p, "fuse", ad.concat([ad.take_rows(h, anchor_idx), Tensor(s_gt)], axis=1), 2)
    return ad.scatter_rows(h, anchor_idx, fused)


def propagate(p: Mapping[str, Tensor], h: Tensor, e: Tensor, batch: GraphBatch,
              cfg: PropagationConfig) -> tuple[Tensor, Tensor]:
    """T outer steps; each runs l_base message-passing rounds then a GRU update.

    Messages travel both ways along every directed edge; the reverse
    direction sees the negated geometry. Edge features are refreshed from
    their endpoints once per outer step.
    """
    if cfg.T == 0:
        return h, e
    n = h.shape[0]
    both_from = np.concatenate([batch.src, batch.dst])
    both_to = np.concatenate([batch.dst, batch.src])
    edge_twice = np.concatenate([np.arange(batch.n_edges), np.arange(batch.n_edges)])
    r_both = Tensor(np.concatenate([batch.r, -batch.r]))
    r_fwd = Tensor(batch.r)
    for _ in range(cfg.T):
        x = h
        e_both = ad.take_rows(e, edge_twice)
        for layer in range(cfg.l_base):
            msg_in = ad.concat([ad.take_rows(x, both_from), e_both, r_both], axis=1)
            msg = mlp(p, f"gnn.{layer}.msg", msg_in, 2)
            agg = ad.segment_sum(msg, both_to, n)
            x = mlp(p, f"gnn.{layer}.merge", ad.concat([x, agg], axis=1), 2)
        h = gru_cell(p, "gru", h, x)
        e = mlp(p, "edge_upd", ad.concat([e, ad.take_rows(h, batch.src), ad.take_rows(h, batch.dst), r_fwd], axis=1), 2)
    return h, e


def backbone(p: Mapping[str, Tensor], batch: GraphBatch, cfg: PropagationConfig) -> tuple[Tensor, Tensor]:
    """Encode, condition the anchors of ``batch`` on their descriptors, propagate."""
    h0 = encode_objects(p, batch)
    e0 = encode_edges(p, batch, h0)
    h0 = fuse_anchor(p, h0, batch.anchor_idx, batch.descriptors[batch.anchor_idx])
    return propagate(p, h0, e0, batch, cfg)
