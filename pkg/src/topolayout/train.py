"""Pretraining loop, frozen-feature evaluation, layout recovery and single-sample overfitting."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import sma
from .actgr import (AnchorMode, GraphBatch, PropagationConfig, backbone, collate, condition_set, encode_objects,
                    init_actgr)
from .diffusion import (NaflConfig, build_schedule, clean_weights, gen_loss, init_denoiser, prepare_targets,
                        reverse_sample)
from .metrics import evaluate_embeddings, layout_error, relation_labels
from .numerics import autodiff as ad
from .numerics.autodiff import NumericalError
from .numerics.optim import OptimizerConfig, adamw_step, cosine_lr
from .numerics.params import ParamStore, load_checkpoint, save_checkpoint
from .numerics.rng import seeded_rng
from .scene import (GraphPrepConfig, LabeledPointCloud, SceneSpec, SubgraphSample, build_dataset, load_dataset,
                    write_scene)

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "loss_gen", "loss_distill", "lr", "nmi_obj", "ari_obj", "acc_obj",
                  "nmi_edge", "ari_edge", "acc_edge", "layout_centroid_err")


class TrainingAbort(RuntimeError):
    """A non-finite value appeared during training."""


@dataclass
class MetricsRow:
    epoch: int
    loss_gen: float
    loss_distill: float
    lr: float
    nmi_obj: float
    ari_obj: float
    acc_obj: float
    nmi_edge: float
    ari_edge: float
    acc_edge: float
    layout_centroid_err: float

    def values(self) -> list:
        return [getattr(self, c) for c in METRIC_COLUMNS]


def metrics_csv(rows: list[MetricsRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for row in rows:
        w.writerow([v if isinstance(v, int) else f"{v:.17g}" for v in row.values()])
    return buf.getvalue()


# ------------------------------------------------------------------ setup


def prop_config(cfg: dict) -> PropagationConfig:
    return PropagationConfig(T=cfg["actgr.T"], l_base=cfg["actgr.l_base"], d=cfg["actgr.d"])


def nafl_config(cfg: dict) -> NaflConfig:
    return NaflConfig(K=cfg["nafl.K"], alpha=cfg["nafl.alpha"], beta=cfg["nafl.beta"], w_min=cfg["nafl.w_min"],
                      w_max=cfg["nafl.w_max"], per_node=cfg["nafl.per_node"], enabled=cfg["nafl.enabled"])


def optim_config(cfg: dict) -> OptimizerConfig:
    clip = cfg["optim.clip_norm"]
    return OptimizerConfig(base_lr=cfg["optim.lr"], weight_decay=cfg["optim.weight_decay"],
                           warmup_epochs=cfg["optim.warmup_epochs"], total_epochs=cfg["run.epochs"],
                           clip_norm=clip if clip > 0 else None)


def init_student(cfg: dict, seed: int) -> ParamStore:
    rng = seeded_rng(seed, 0x1417)
    store = ParamStore()
    init_actgr(store, prop_config(cfg), rng)
    init_denoiser(store, cfg["actgr.d"], cfg["diff.hidden"], rng)
    sma.init_heads(store, cfg["actgr.d"], {lv: cfg[f"sma.protos.{lv}"] for lv in sma.LEVELS}, rng)
    return store


def make_bank(cfg: dict) -> sma.DistillBank:
    return sma.DistillBank.create(cfg["actgr.d"], cfg["sma.queue_len"], cfg["sma.tau"], cfg["sma.sinkhorn_eps"],
                                  cfg["sma.sinkhorn_iters"])


def load_samples(cfg: dict) -> list[SubgraphSample]:
    if cfg["run.data_dir"]:
        return load_dataset(cfg["run.data_dir"])
    spec = SceneSpec(num_objects=cfg["scene.num_objects"], points_per_object=cfg["scene.points_per_object"],
                     noise_clusters=cfg["scene.noise_clusters"])
    prep = GraphPrepConfig(tau_pts=cfg["scene.tau_pts"], k_min=cfg["scene.k_min"], rho_min=cfg["scene.rho_min"],
                           rho_max=cfg["scene.rho_max"])
    return build_dataset(spec, prep, cfg["scene.seed"], n_samples=cfg["scene.num_samples"])


def _sub_seed(*keys: int) -> int:
    return int(seeded_rng(*keys).integers(2**31))


def anchors_for(samples, mode: AnchorMode, seed: int, ids) -> list[list[int]]:
    return [condition_set(s, mode, _sub_seed(seed, 0xA7, i)) for s, i in zip(samples, ids)]


def encode_views(p, tagged: list[tuple[str, list]], anchors, pcfg: PropagationConfig) -> dict[str, sma.ViewFeatures]:
    """One backbone pass over the disjoint union of several views of the same samples."""
    n = len(anchors)
    batch = collate([s for _, group in tagged for s in group], anchors * len(tagged))
    h, e = backbone(p, batch, pcfg)
    keys = batch.edge_keys()
    out = {}
    for k, (tag, group) in enumerate(tagged):
        if len(group) != n:
            raise ValueError("every view needs one entry per sample")
        nodes = np.flatnonzero((batch.node_sample >= k * n) & (batch.node_sample < (k + 1) * n))
        edges = np.flatnonzero((batch.edge_sample >= k * n) & (batch.edge_sample < (k + 1) * n))
        first = nodes[0]
        out[tag] = sma.ViewFeatures(ad.take_rows(h, nodes), ad.take_rows(e, edges), batch.src[edges] - first,
                                    batch.dst[edges] - first, [(si - k * n, a, b) for si, a, b in (keys[j] for j in edges)])
    return out


def _teacher_queue_items(feats: sma.ViewFeatures) -> dict[str, np.ndarray]:
    out = {"obj": sma._normalize_rows(feats.obj.data)}
    if len(feats.src):
        out["edge"] = sma._normalize_rows(feats.edge.data)
        out["trip"] = sma._normalize_rows(feats.triplet(np.arange(len(feats.src))).data)
    return out


# ------------------------------------------------------------------ training


@dataclass
class TrainState:
    student: ParamStore
    teacher: ParamStore
    bank: sma.DistillBank
    epoch: int  # epochs completed
    rows: list[MetricsRow]


class Trainer:
    def __init__(self, cfg: dict, samples: list[SubgraphSample]):
        self.cfg = cfg
        self.samples = samples
        self.pcfg = prop_config(cfg)
        self.nafl = nafl_config(cfg)
        self.ocfg = optim_config(cfg)
        self.schedule = build_schedule(cfg["diff.steps"], cfg["diff.schedule"])
        self.mode = AnchorMode.parse(cfg["actgr.anchor_mode"])
        self.seed = cfg["seed"]
        self.teacher_tags = [v.tag for v in sma.DEFAULT_VIEWS if v.role == "teacher"]
        self.student_tags = [v.tag for v in sma.DEFAULT_VIEWS if v.role == "student"]
        self._weights: dict[int, np.ndarray] = {}

    def fresh_state(self) -> TrainState:
        student = init_student(self.cfg, self.seed)
        state = TrainState(student, sma.make_teacher(student), make_bank(self.cfg), 0, [])
        if self.cfg["sma.warmup"] and self.cfg["sma.lambda"] > 0:
            sma.warmup_queues(state.bank, self._teacher_stream(state))
        return state

    def _teacher_stream(self, state: TrainState):
        order = seeded_rng(self.seed, 0x3A5).permutation(len(self.samples))
        bs = self.cfg["run.batch_size"]
        pt = state.teacher.bind(False)
        for k in range(0, len(order), bs):
            ids = order[k:k + bs].tolist()
            chunk = [self.samples[i] for i in ids]
            views = [sma.build_views(s, sma.DEFAULT_VIEWS, _sub_seed(self.seed, 0x3A6, i)) for s, i in zip(chunk, ids)]
            anchors = anchors_for(chunk, self.mode, self.seed, ids)
            with ad.no_grad():
                feats = encode_views(pt, [(t, [v[t] for v in views]) for t in self.teacher_tags], anchors, self.pcfg)
            for tag in self.teacher_tags:
                yield _teacher_queue_items(feats[tag])

    def _sample_weights(self, idx: int) -> np.ndarray:
        if idx not in self._weights:
            self._weights[idx] = clean_weights(collate([self.samples[idx]]), self.nafl)
        return self._weights[idx]

    def losses(self, p, state: TrainState, ids: list[int], epoch: int, step_no: int):
        """(total, gen, distill, teacher features) for one step, given bound student tensors ``p``."""
        cfg = self.cfg
        step_seed = _sub_seed(self.seed, 0x57E, epoch, step_no)
        chunk = [self.samples[i] for i in ids]
        anchors = anchors_for(chunk, self.mode, step_seed, ids)
        lam = cfg["sma.lambda"]

        gen_view = [sma.build_view(s, sma.GEN_VIEW, _sub_seed(step_seed, i)) for s, i in zip(chunk, ids)]
        views = [sma.build_views(s, sma.DEFAULT_VIEWS, _sub_seed(step_seed, i)) for s, i in zip(chunk, ids)]
        student_groups = [(t, [v[t] for v in views]) for t in self.student_tags]
        pt = state.teacher.bind(False)
        with ad.no_grad():
            tea = encode_views(pt, [(t, [v[t] for v in views]) for t in self.teacher_tags], anchors, self.pcfg)
        if lam > 0:
            stu = encode_views(p, student_groups + [("G", gen_view)], anchors, self.pcfg)
            h_gen = stu.pop("G").obj
            d_loss, _ = sma.distill_loss(p, stu, tea, state.bank, mode=cfg["sma.mode"])
        else:
            h_gen = encode_views(p, [("G", gen_view)], anchors, self.pcfg)["G"].obj
            # reported only; no graph needed
            with ad.no_grad():
                pn = state.student.bind(False)
                stu = encode_views(pn, student_groups, anchors, self.pcfg)
                d_loss, _ = sma.distill_loss(pn, stu, tea, state.bank, mode=cfg["sma.mode"])
        clean = collate(chunk)
        weights = np.concatenate([self._sample_weights(i) for i in ids])
        targets = prepare_targets(clean, cfg["diff.points_per_node"], self.nafl, step_seed, weights)
        g_loss, _ = gen_loss(p, h_gen, targets, self.schedule, step_seed)
        return sma.total_loss(g_loss, d_loss, lam), g_loss, d_loss, tea

    def step(self, state: TrainState, ids: list[int], epoch: int, step_no: int, lr: float) -> tuple[float, float]:
        total, g_loss, d_loss, tea = self.losses(state.student.bind(True), state, ids, epoch, step_no)
        grads = ad.backward(total, wrt=state.student)
        adamw_step(state.student, grads, self.ocfg, lr)
        sma.normalize_prototypes(state.student)
        sma.ema_update(state.student, state.teacher, self.cfg["sma.ema_alpha"])
        if self.cfg["sma.lambda"] > 0:
            for t in self.teacher_tags:
                for lv, items in _teacher_queue_items(tea[t]).items():
                    sma.queue_push(state.bank, lv, items)
        return g_loss.item(), d_loss.item()

    def run_epoch(self, state: TrainState) -> tuple[float, float, float]:
        epoch = state.epoch
        lr = cosine_lr(epoch, self.ocfg)
        order = seeded_rng(self.seed, 0xE0C, epoch).permutation(len(self.samples))
        bs = self.cfg["run.batch_size"]
        gens, dists = [], []
        for step_no, k in enumerate(range(0, len(order), bs)):
            ids = order[k:k + bs].tolist()
            try:
                g, d = self.step(state, ids, epoch, step_no, lr)
            except NumericalError as exc:
                raise TrainingAbort(f"epoch {epoch + 1}: non-finite value in {exc} on samples {ids}") from exc
            if not (np.isfinite(g) and np.isfinite(d)):
                raise TrainingAbort(f"epoch {epoch + 1}: non-finite loss on samples {ids}")
            gens.append(g)
            dists.append(d)
        state.epoch += 1
        return float(np.mean(gens)), float(np.mean(dists)), lr


def _eval_features(p, batch: GraphBatch, pcfg: PropagationConfig):
    """Object features straight from the object encoder; edge features after propagation."""
    h0 = encode_objects(p, batch)
    return h0, backbone(p, batch, pcfg)[1]


def evaluate(student: ParamStore, samples: list[SubgraphSample], cfg: dict) -> dict[str, float]:
    """Frozen-encoder clustering scores (no anchors) and layout-recovery error."""
    pcfg = prop_config(cfg)
    p = student.bind(False)
    obj_f, obj_y, edge_f, edge_y = [], [], [], []
    with ad.no_grad():
        for k in range(0, len(samples), 64):
            batch = collate(samples[k:k + 64])
            h, e = _eval_features(p, batch, pcfg)
            keep = batch.categories >= 0
            obj_f.append(h.data[keep])
            obj_y.append(batch.categories[keep])
            edge_f.append(e.data)
            edge_y.append(relation_labels(batch.r))
    seed = cfg["eval.seed"]
    # cluster on the unit sphere: the distillation heads only ever see cosine geometry
    obj = evaluate_embeddings(sma._normalize_rows(np.concatenate(obj_f)), np.concatenate(obj_y), seed)
    edge = evaluate_embeddings(sma._normalize_rows(np.concatenate(edge_f)), np.concatenate(edge_y), seed)
    subset = samples[:cfg["eval.recover_samples"]]
    errs = [err.mean_centroid for _, err in recover_samples(student, subset, cfg, seed)] if subset else []
    return {"nmi_obj": float(obj.nmi), "ari_obj": float(obj.ari), "acc_obj": float(obj.acc),
            "nmi_edge": float(edge.nmi), "ari_edge": float(edge.ari), "acc_edge": float(edge.acc), "layout_centroid_err": float(np.mean(errs)) if errs else 0.0}


def embeddings(student: ParamStore, samples: list[SubgraphSample], cfg: dict) -> dict[str, np.ndarray]:
    pcfg = prop_config(cfg)
    with ad.no_grad():
        batch = collate(samples)
        h, e = _eval_features(student.bind(False), batch, pcfg)
    return {"obj_features": h.data, "obj_labels": batch.categories.astype(np.float64),
            "edge_features": e.data, "edge_labels": relation_labels(batch.r).astype(np.float64)}


def recover_samples(student: ParamStore, samples: list[SubgraphSample], cfg: dict, seed: int,
                    n_points: int | None = None):
    """Condition each sample on its anchors, propagate and reverse-sample every node's cloud."""
    mode = AnchorMode.parse(cfg["actgr.anchor_mode"])
    ids = list(range(len(samples)))
    anchors = anchors_for(samples, mode, seed, ids)
    views = [sma.build_view(s, sma.GEN_VIEW, _sub_seed(seed, 0x6E, i)) for s, i in zip(samples, ids)]
    p = student.bind(False)
    with ad.no_grad():
        h = backbone(p, collate(views, anchors), prop_config(cfg))[0]
    clouds = reverse_sample(p, h, build_schedule(cfg["diff.steps"], cfg["diff.schedule"]),
                            n_points or cfg["eval.recover_points"], seed)
    out, k = [], 0
    for s in samples:
        recovered = {node.id: clouds[k + j] for j, node in enumerate(s.nodes)}
        k += len(s.nodes)
        out.append((recovered, layout_error(recovered, s)))
    return out


def recover_sample(student: ParamStore, sample: SubgraphSample, cfg: dict, seed: int, n_points: int | None = None):
    return recover_samples(student, [sample], cfg, seed, n_points)[0]


# ------------------------------------------------------------------ runs


def _state_arrays(state: TrainState) -> dict[str, np.ndarray]:
    arrays = dict(state.student.arrays("student"))
    arrays.update(state.teacher.arrays("teacher"))
    arrays.update(state.bank.arrays())
    return arrays


def save_state(directory, state: TrainState, cfg: dict) -> None:
    meta = {"config": cfg, "epoch": state.epoch, "rows": [r.values() for r in state.rows]}
    save_checkpoint(directory, _state_arrays(state), meta)


def load_state(directory, cfg: dict | None = None) -> tuple[TrainState, dict]:
    arrays, meta = load_checkpoint(directory)
    saved = meta["config"]
    if cfg is not None:
        diff = sorted(k for k in saved if k not in ("run.out_dir",) and saved[k] != cfg.get(k))
        if diff:
            raise ValueError(f"checkpoint config differs on {diff}")
    cfg = cfg or saved
    bank = make_bank(cfg)
    bank.load_arrays(arrays)
    rows = [MetricsRow(int(r[0]), *map(float, r[1:])) for r in meta["rows"]]
    state = TrainState(ParamStore.from_arrays(arrays, "student"), ParamStore.from_arrays(arrays, "teacher"),
                       bank, int(meta["epoch"]), rows)
    return state, saved


def run_pretrain(cfg: dict, samples: list[SubgraphSample] | None = None, resume_from=None,
                 stop_after: int | None = None, out_dir=None) -> TrainState:
    """Train for ``run.epochs`` epochs (or until ``stop_after``); writes checkpoint/ and metrics.csv."""
    samples = load_samples(cfg) if samples is None else samples
    trainer = Trainer(cfg, samples)
    state = load_state(resume_from, cfg)[0] if resume_from else trainer.fresh_state()
    last = cfg["run.epochs"] if stop_after is None else min(stop_after, cfg["run.epochs"])
    every = cfg["run.eval_every"]
    while state.epoch < last:
        loss_g, loss_d, lr = trainer.run_epoch(state)
        ep = state.epoch
        if ep == 1 or ep % every == 0 or ep == cfg["run.epochs"]:
            scores = evaluate(state.student, samples, cfg)
            state.rows.append(MetricsRow(ep, loss_g, loss_d, lr, **scores))
            log.info("epoch %d gen %.4f distill %.4f nmi_obj %.3f", ep, loss_g, loss_d, scores["nmi_obj"])
    out = Path(out_dir or cfg["run.out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    save_state(out / "checkpoint", state, cfg)
    (out / "metrics.csv").write_text(metrics_csv(state.rows))
    return state


def run_eval(checkpoint, samples: list[SubgraphSample], out_dir) -> MetricsRow:
    state, cfg = load_state(checkpoint)
    scores = evaluate(state.student, samples, cfg)
    row = MetricsRow(state.epoch, float("nan"), float("nan"), float("nan"), **scores)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.csv").write_text(metrics_csv([row]))
    save_checkpoint(out / "embeddings", embeddings(state.student, samples, cfg), {"epoch": state.epoch})
    return row


def run_recover(checkpoint, sample: SubgraphSample, seed: int, out_path, n_points: int = 64):
    state, cfg = load_state(checkpoint)
    recovered, err = recover_sample(state.student, sample, cfg, seed, n_points)
    ids = sorted(recovered)
    cloud = LabeledPointCloud(np.concatenate([recovered[i] for i in ids]),
                              np.repeat(ids, [len(recovered[i]) for i in ids]),
                              {n.id: n.category_id for n in sample.nodes})
    write_scene(out_path, cloud)
    report = {"mean_centroid": err.mean_centroid, "mean_extent": err.mean_extent,
              "centroid": {str(k): v for k, v in err.centroid.items()},
              "extent": {str(k): v for k, v in err.extent.items()}}
    Path(str(out_path) + ".errors.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return err


def run_overfit(sample: SubgraphSample, cfg: dict, steps: int, seed: int = 0, lr: float = 1e-3,
                out_dir=None) -> TrainState:
    """Fit the generation loss alone on one sample (distillation weight zero)."""
    cfg = dict(cfg, **{"sma.lambda": 0.0})
    trainer = Trainer(cfg, [sample])
    student = init_student(cfg, seed)
    state = TrainState(student, sma.make_teacher(student), make_bank(cfg), 0, [])
    ocfg = OptimizerConfig(base_lr=lr, weight_decay=0.0, warmup_epochs=0, total_epochs=1)
    trainer.ocfg = ocfg
    for k in range(steps):
        trainer.step(state, [0], 0, k, lr)
    state.epoch = 1
    if out_dir is not None:
        save_state(Path(out_dir) / "checkpoint", state, cfg)
    return state
