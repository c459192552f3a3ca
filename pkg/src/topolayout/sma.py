"""Structural multi-view augmentation and queue-based SwAV self-distillation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .numerics import autodiff as ad
from .numerics.autodiff import Tensor
from .numerics.nn import init_mlp, mlp
from .numerics.params import ParamStore
from .numerics.rng import seeded_rng
from .scene.descriptors import compute_descriptor
from .scene.graph import SceneNode, SubgraphSample, make_sample

log = logging.getLogger(__name__)

LEVELS = ("obj", "edge", "trip")
MIN_VIEW_POINTS = 8
TEACHER_EXCLUDE = ("pred.", "proto.", "diff.")


@dataclass(frozen=True)
class ViewSpec:
    role: str  # student | teacher
    source: str  # origin | augmented
    point_mask_ratio: float
    edge_mask_ratio: float
    tag: str

    def __post_init__(self):
        if self.role not in ("student", "teacher"):
            raise ValueError(f"bad view role {self.role!r}")
        if self.source not in ("origin", "augmented"):
            raise ValueError(f"bad view source {self.source!r}")
        for r in (self.point_mask_ratio, self.edge_mask_ratio):
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"mask ratio {r} outside [0, 1]")


DEFAULT_VIEWS = (
    ViewSpec("student", "origin", 0.8, 0.2, "S1"),
    ViewSpec("student", "augmented", 0.8, 0.6, "S2"),
    ViewSpec("student", "origin", 0.8, 0.6, "S3"),
    ViewSpec("teacher", "origin", 0.2, 0.2, "T6"),
    ViewSpec("teacher", "augmented", 0.1, 0.1, "T5"),
)
DEFAULT_PAIRS = (("T6", "S2"), ("T5", "S3"), ("T5", "S1"), ("T6", "S3"))
# generation runs on the anchored sample with all edges and node points masked
GEN_VIEW = ViewSpec("student", "origin", 0.8, 0.0, "G")


def _augment(sample: SubgraphSample, rng: np.random.Generator) -> list[SceneNode]:
    centre = np.concatenate([n.points for n in sample.nodes]).mean(axis=0)
    s = rng.uniform(0.9, 1.1)
    out = []
    for node in sample.nodes:
        pts = centre + s * (node.points - centre)
        pts = pts[rng.integers(0, len(pts), size=len(pts))]
        sigma = 0.005 * max(node.descriptor.max_length, 1e-6) * s
        pts = pts + rng.normal(0.0, sigma, size=pts.shape)
        out.append(SceneNode(node.id, pts, compute_descriptor(pts), node.category_id))
    return out


def build_view(sample: SubgraphSample, spec: ViewSpec, seed: int) -> SubgraphSample:
    rng = seeded_rng(seed, 0x5EE, sum(map(ord, spec.tag)))
    if spec.source == "augmented":
        nodes = _augment(sample, rng)
    else:
        nodes = list(sample.nodes)
    if spec.point_mask_ratio > 0:
        masked = []
        for node in nodes:
            n = len(node.points)
            keep = max(n - int(np.floor(spec.point_mask_ratio * n)), min(n, MIN_VIEW_POINTS))
            sel = np.sort(rng.choice(n, size=keep, replace=False))
            # occlusion hides points; the object's true descriptor is unchanged
            masked.append(SceneNode(node.id, node.points[sel], node.descriptor, node.category_id))
        nodes = masked
    pairs = sample.edge_pairs()
    n_drop = int(np.floor(spec.edge_mask_ratio * len(pairs)))
    if n_drop:
        kept = np.sort(rng.choice(len(pairs), size=len(pairs) - n_drop, replace=False))
        pairs = [pairs[i] for i in kept]
    if spec.source == "origin":
        kept_set = set(pairs)
        edges = [e for e in sample.edges if (e[0], e[1]) in kept_set]
        view = SubgraphSample(nodes, edges, sample.anchor)
    else:
        view = make_sample(nodes, pairs, sample.anchor)
    view.meta = dict(sample.meta, view=spec.tag)
    return view


def build_views(sample: SubgraphSample, table: Iterable[ViewSpec] = DEFAULT_VIEWS, seed: int = 0) -> dict[str, SubgraphSample]:
    return {spec.tag: build_view(sample, spec, seed) for spec in table}


def ema_update(student: ParamStore, teacher: ParamStore, alpha: float) -> ParamStore:
    """In-place xi <- alpha*xi + (1-alpha)*theta over the teacher's parameters."""
    expected = {k for k in student if not k.startswith(TEACHER_EXCLUDE)}
    if expected != set(teacher):
        raise ValueError(f"teacher/student parameter names differ: {sorted(expected ^ set(teacher))[:5]}")
    for k in teacher:
        if teacher[k].shape != student[k].shape:
            raise ValueError(f"shape mismatch for {k}: {teacher[k].shape} vs {student[k].shape}")
        xi = teacher[k]
        xi *= alpha
        xi += (1.0 - alpha) * student[k]
    return teacher


def make_teacher(student: ParamStore) -> ParamStore:
    return student.subset(TEACHER_EXCLUDE)


# ----------------------------------------------------------------- sinkhorn


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = a.max(axis=axis, keepdims=True)
    return m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))


def sinkhorn(scores: np.ndarray, eps: float = 0.05, n_iters: int = 10, return_trace: bool = False):
    """Balanced soft assignment of B' rows to K prototypes.

    Each round normalizes columns to mass B'/K, then rows to mass 1, in
    log-space. The returned rows sum to exactly 1.0.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or 0 in scores.shape:
        raise ValueError("sinkhorn needs a nonempty 2-D score matrix")
    if not np.all(np.isfinite(scores)):
        raise ValueError("sinkhorn scores must be finite")
    b, k = scores.shape
    log_q = scores / eps
    log_q = log_q - _logsumexp(log_q, axis=1)
    trace = []
    for _ in range(n_iters):
        log_q = log_q - _logsumexp(log_q, axis=0) + np.log(b / k)
        log_q = log_q - _logsumexp(log_q, axis=1)
        if return_trace:
            trace.append(float(np.abs(np.exp(log_q).sum(axis=0) - b / k).max()))
    q = np.exp(log_q)
    q = q / q.sum(axis=1, keepdims=True)
    _exact_rows(q)
    return (q, trace) if return_trace else q


def _exact_rows(q: np.ndarray) -> None:
    """Snap rows onto the 2**-52 grid with the residual on each row's top entry.

    Every partial sum is then exactly representable, so each row adds up to
    1.0 under any summation order. Entries move by at most 2**-53.
    """
    scale = 2.0 ** 52
    ticks = np.rint(q * scale)
    ticks[np.arange(q.shape[0]), q.argmax(axis=1)] += scale - ticks.sum(axis=1)
    q[:] = ticks / scale


# ------------------------------------------------------------ queues / bank


@dataclass
class LevelQueue:
    dim: int
    capacity: int
    items: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.items is None:
            self.items = np.zeros((0, self.dim))

    def __len__(self) -> int:
        return len(self.items)


@dataclass
class DistillBank:
    queues: dict[str, LevelQueue]
    tau: float = 0.1
    eps: float = 0.05
    iters: int = 10

    @classmethod
    def create(cls, dim: int, capacity: int, tau: float = 0.1, eps: float = 0.05, iters: int = 10) -> "DistillBank":
        dims = {"obj": dim, "edge": dim, "trip": 3 * dim}
        return cls({lv: LevelQueue(dims[lv], capacity) for lv in LEVELS}, tau, eps, iters)

    def full(self) -> bool:
        return all(len(q) >= q.capacity for q in self.queues.values())

    def arrays(self) -> dict[str, np.ndarray]:
        return {f"queue/{lv}": q.items.copy() for lv, q in self.queues.items()}

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        for lv, q in self.queues.items():
            q.items = np.asarray(arrays[f"queue/{lv}"], dtype=np.float64).reshape(-1, q.dim).copy()


def _normalize_rows(x: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    return x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), eps)


def queue_push(bank: DistillBank, level: str, features: np.ndarray) -> DistillBank:
    q = bank.queues[level]
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != q.dim:
        raise ValueError(f"{level} queue holds width {q.dim}, got {features.shape}")
    q.items = np.concatenate([q.items, features])[-q.capacity:] if q.capacity else q.items[:0]
    return bank


def queue_view(bank: DistillBank, level: str) -> np.ndarray:
    return bank.queues[level].items


def warmup_queues(bank: DistillBank, feature_stream: Iterable[Mapping[str, np.ndarray]]) -> int:
    """Fill every queue from teacher features before training; returns batches consumed."""
    used = 0
    for feats in feature_stream:
        if bank.full():
            break
        for lv in LEVELS:
            if lv in feats and len(feats[lv]):
                queue_push(bank, lv, feats[lv])
        used += 1
    if not bank.full():
        log.warning("queue warm-up ran out of data: sizes %s", {lv: len(q) for lv, q in bank.queues.items()})
    return used


# ------------------------------------------------------------------ losses


def init_heads(store: ParamStore, dim: int, n_protos: Mapping[str, int], rng: np.random.Generator) -> None:
    dims = {"obj": dim, "edge": dim, "trip": 3 * dim}
    for lv in LEVELS:
        init_mlp(store, f"pred.{lv}", [dims[lv], dims[lv], dims[lv]], rng)
        store.add(f"proto.{lv}", _normalize_rows(rng.standard_normal((n_protos[lv], dims[lv]))))


def normalize_prototypes(store: ParamStore) -> None:
    for lv in LEVELS:
        name = f"proto.{lv}"
        if name in store:
            store.set(name, _normalize_rows(store[name]))


def swav_loss(z_stu: Tensor, z_teacher: np.ndarray, protos: Tensor, bank: DistillBank, level: str,
              targets: np.ndarray | None = None):
    """Cross entropy of teacher Sinkhorn codes against student prototype softmax.

    The queue widens the Sinkhorn support only; the loss sums over the
    current batch's B rows. ``targets`` replaces the computed codes.
    """
    q_lv = bank.queues[level]
    if z_stu.shape[1] != q_lv.dim or protos.shape[1] != q_lv.dim:
        raise ValueError(f"feature width does not match the {level} level ({q_lv.dim})")
    z_teacher = np.asarray(z_teacher, dtype=np.float64)
    b = z_stu.shape[0]
    if targets is None:
        support = np.concatenate([_normalize_rows(z_teacher), queue_view(bank, level)])
        q = sinkhorn(support @ protos.data.T, bank.eps, bank.iters)[:b]
    else:
        q = np.asarray(targets, dtype=np.float64)
    logits = ad.matmul(ad.l2_normalize(z_stu), ad.transpose(protos)) / bank.tau
    logp = ad.log_softmax(logits, axis=1)
    loss = -ad.sum(Tensor(q) * logp) / float(b)
    return loss, {"q": q, "p": np.exp(logp.data)}


@dataclass
class ViewFeatures:
    obj: Tensor  # (N, d)
    edge: Tensor  # (E, d)
    src: np.ndarray
    dst: np.ndarray
    edge_keys: list

    def triplet(self, idx: np.ndarray) -> Tensor:
        return ad.concat([ad.take_rows(self.obj, self.src[idx]), ad.take_rows(self.obj, self.dst[idx]),
                          ad.take_rows(self.edge, idx)], axis=1)


def _match_edges(a_keys: list, b_keys: list) -> tuple[np.ndarray, np.ndarray]:
    pos = {k: i for i, k in enumerate(b_keys)}
    ia, ib = [], []
    for i, k in enumerate(a_keys):
        if k in pos:
            ia.append(i)
            ib.append(pos[k])
    return np.asarray(ia, dtype=np.int64), np.asarray(ib, dtype=np.int64)


def _level_inputs(stu: ViewFeatures, tea: ViewFeatures):
    if stu.obj.shape[0] != tea.obj.shape[0]:
        raise ValueError("paired views must share their node set")
    yield "obj", stu.obj, tea.obj.data
    i_s, i_t = _match_edges(stu.edge_keys, tea.edge_keys)
    if len(i_s) == 0:
        log.warning("no edge survives in both paired views; edge and triplet terms are zero")
        return
    yield "edge", ad.take_rows(stu.edge, i_s), tea.edge.data[i_t]
    yield "trip", stu.triplet(i_s), tea.triplet(i_t).data


def distill_loss(p: Mapping[str, Tensor], student: Mapping[str, ViewFeatures], teacher: Mapping[str, ViewFeatures],
                 bank: DistillBank, pairs=DEFAULT_PAIRS, use_predictor: bool = True, mode: str = "swav"):
    """Sum of per-level losses over teacher -> student view pairs."""
    total = Tensor(np.zeros(()))
    per_term = {}
    for t_tag, s_tag in pairs:
        for lv, z_s, z_t in _level_inputs(student[s_tag], teacher[t_tag]):
            if use_predictor:
                z_s = mlp(p, f"pred.{lv}", z_s, 2)
            if mode == "swav":
                term, _ = swav_loss(z_s, z_t, p[f"proto.{lv}"], bank, lv)
            elif mode == "mse":
                diff = ad.l2_normalize(z_s) - Tensor(_normalize_rows(z_t))
                term = ad.mean(ad.sum(ad.square(diff), axis=1))
            else:
                raise ValueError(f"unknown distillation mode {mode!r}")
            per_term[(t_tag, s_tag, lv)] = term.item()
            total = total + term
    return total, per_term


def total_loss(gen: Tensor, distill: Tensor, lam: float = 0.1) -> Tensor:
    if not (np.isfinite(gen.item()) and np.isfinite(distill.item())):
        raise ValueError("non-finite loss component")
    if lam == 0.0:
        return gen
    return gen + distill * lam
