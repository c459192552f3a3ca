"""Conditional DDPM over per-node point clouds with noise-aware focal weighting."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.spatial import cKDTree

from .numerics import autodiff as ad
from .numerics.autodiff import Tensor
from .numerics.nn import init_mlp, mlp
from .numerics.params import ParamStore
from .numerics.rng import seeded_rng

TIME_EMBED_DIM = 16


@dataclass
class DiffusionSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def steps(self) -> int:
        return len(self.betas)

    def check_step(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.int64)
        if np.any(t < 1) or np.any(t > self.steps):
            raise ValueError(f"diffusion step outside [1, {self.steps}]")
        return t


def build_schedule(steps: int = 100, kind: str = "linear") -> DiffusionSchedule:
    if steps < 1:
        raise ValueError("need at least one diffusion step")
    if kind in ("linear", "linear-beta"):
        # the classic 1e-4..0.02 range is tuned for 1000 steps; rescale for shorter chains
        scale = 1000.0 / steps
        betas = np.linspace(scale * 1e-4, scale * 0.02, steps)
    elif kind == "cosine":
        s = 0.008
        f = np.cos((np.arange(steps + 1) / steps + s) / (1 + s) * math.pi / 2) ** 2
        betas = 1.0 - f[1:] / f[:-1]
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    betas = np.clip(betas, 1e-8, 0.999)
    alphas = 1.0 - betas
    return DiffusionSchedule(betas, alphas, np.cumprod(alphas))


def forward_noise(x0: np.ndarray, t, eps: np.ndarray, schedule: DiffusionSchedule) -> np.ndarray:
    """Sample q(x_t | x_0). ``t`` may be a scalar or one step per row."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"noise shape {eps.shape} != data shape {x0.shape}")
    t = schedule.check_step(t)
    ab = schedule.alpha_bars[t - 1]
    if ab.ndim:
        ab = ab.reshape(ab.shape + (1,) * (x0.ndim - ab.ndim))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def time_embedding(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    half = TIME_EMBED_DIM // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    ang = t * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def init_denoiser(store: ParamStore, d: int, hidden: int, rng: np.random.Generator) -> None:
    init_mlp(store, "diff.eps", [3 + TIME_EMBED_DIM + d, hidden, hidden, 3], rng)


def predict_noise(p: Mapping[str, Tensor], xt, t, cond, point_node) -> Tensor:
    """Per-point MLP over [x_t || time embedding || condition of the owning node]."""
    xt = ad.as_tensor(xt)
    cond = ad.as_tensor(cond)
    point_node = np.asarray(point_node, dtype=np.int64)
    t = np.broadcast_to(np.asarray(t), (xt.shape[0],))
    if xt.ndim != 2 or xt.shape[1] != 3:
        raise ValueError(f"expected (P, 3) points, got {xt.shape}")
    if point_node.shape != (xt.shape[0],) or (len(point_node) and point_node.max() >= cond.shape[0]):
        raise ValueError("point_node must map every point to a conditioned node")
    if cond.shape[1] + 3 + TIME_EMBED_DIM != p["diff.eps.0.W"].shape[0]:
        raise ValueError(f"condition width {cond.shape[1]} does not match the denoiser")
    x = ad.concat([xt, Tensor(time_embedding(t)), ad.take_rows(cond, point_node)], axis=1)
    return mlp(p, "diff.eps", x, 3)


# ------------------------------------------------------------------ NAFL


@dataclass
class NaflConfig:
    K: int = 16
    alpha: float = 20.0
    beta: float = 0.8
    w_min: float = 0.1
    w_max: float = 1.2
    eps: float = 1e-9
    per_node: bool = False
    enabled: bool = True

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("NAFL needs K >= 2")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.w_min > self.w_max:
            raise ValueError("w_min must not exceed w_max")


def local_covariance_eigs(points: np.ndarray, K: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigenvalues (n, 3) of each point's K-neighbour covariance, and mean neighbour distance."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) <= K:
        raise ValueError(f"need more than K={K} points, got {len(points)}")
    dist, idx = cKDTree(points).query(points, k=K + 1)
    # drop self; with duplicates the self hit may not be in column 0
    own = idx == np.arange(len(points))[:, None]
    first_self = np.where(own.any(axis=1), own.argmax(axis=1), K)
    keep = np.ones_like(own)
    keep[np.arange(len(points)), first_self] = False
    nbr = idx[keep].reshape(len(points), K)
    d = dist[keep].reshape(len(points), K)
    q = points[nbr]
    q = q - q.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", q, q) / (K - 1)
    lam = np.linalg.eigvalsh(cov)
    return np.maximum(lam, 0.0), d.mean(axis=1)


def nafl_weights(points: np.ndarray, cfg: NaflConfig = NaflConfig()) -> np.ndarray:
    lam, dbar = local_covariance_eigs(points, cfg.K)
    sphericity = lam[:, 0] / (lam[:, 2] + cfg.eps)
    s_struct = 1.0 - sphericity
    s_dense = np.exp(-cfg.alpha * dbar)
    w = cfg.w_min + (cfg.w_max - cfg.w_min) * (cfg.beta * s_struct + (1.0 - cfg.beta) * s_dense)
    return np.clip(w, cfg.w_min, cfg.w_max)


# ------------------------------------------------------------ training loss


@dataclass
class DiffusionTargets:
    x0: np.ndarray  # (N*M, 3) absolute-frame clean points
    weights: np.ndarray  # (N*M,)
    point_node: np.ndarray  # (N*M,)
    node_sample: np.ndarray  # (N,)
    n_samples: int


def clean_weights(batch, nafl: NaflConfig) -> np.ndarray:
    """NAFL weight of every point in ``batch``, from the merged per-sample cloud
    (or each node alone when ``nafl.per_node``); all ones when disabled."""
    offs = batch.point_offsets
    n_nodes = batch.n_nodes
    w_all = np.ones(len(batch.points))
    if nafl.enabled:
        if nafl.per_node:
            for k in range(n_nodes):
                w_all[offs[k]:offs[k + 1]] = nafl_weights(batch.points[offs[k]:offs[k + 1]], nafl)
        else:
            for s in range(batch.n_samples):
                ks = np.flatnonzero(batch.node_sample == s)
                lo, hi = offs[ks[0]], offs[ks[-1] + 1]
                w_all[lo:hi] = nafl_weights(batch.points[lo:hi], nafl)
    return w_all


def prepare_targets(batch, n_points: int, nafl: NaflConfig, seed: int,
                    weights: np.ndarray | None = None) -> DiffusionTargets:
    """Subsample ``n_points`` clean points per node and attach their NAFL weights.

    Weights are plain arrays (precomputed ``weights`` may be passed in), so no
    gradient flows through them.
    """
    offs = batch.point_offsets
    n_nodes = batch.n_nodes
    w_all = clean_weights(batch, nafl) if weights is None else np.asarray(weights, dtype=np.float64)
    if w_all.shape != (len(batch.points),):
        raise ValueError("need one weight per batch point")
    rng = seeded_rng(seed, 0xD1F)
    picks = []
    for k in range(n_nodes):
        n = offs[k + 1] - offs[k]
        sel = rng.choice(n, size=n_points, replace=n < n_points)
        picks.append(offs[k] + sel)
    picks = np.concatenate(picks)
    return DiffusionTargets(
        x0=batch.points[picks],
        weights=w_all[picks],
        point_node=np.repeat(np.arange(n_nodes), n_points),
        node_sample=batch.node_sample.copy(),
        n_samples=batch.n_samples,
    )


def gen_loss(p: Mapping[str, Tensor], cond: Tensor, targets: DiffusionTargets,
             schedule: DiffusionSchedule, seed: int, eps_override: np.ndarray | None = None):
    """Weighted noise-prediction loss: mean over samples of mean over nodes of
    mean over points of w * ||eps - eps_hat||^2. One (tau, eps) draw per node."""
    rng = seeded_rng(seed, 0xD1E)
    n_nodes = cond.shape[0]
    taus = rng.integers(1, schedule.steps + 1, size=n_nodes)
    eps = rng.standard_normal(targets.x0.shape) if eps_override is None else eps_override
    t_point = taus[targets.point_node]
    xt = forward_noise(targets.x0, t_point, eps, schedule)
    eps_hat = predict_noise(p, xt, t_point, cond, targets.point_node)
    err = ad.sum(ad.square(Tensor(eps) - eps_hat), axis=1)
    weighted = err * Tensor(targets.weights)
    pts_per_node = np.bincount(targets.point_node, minlength=n_nodes).astype(np.float64)
    nodes_per_sample = np.bincount(targets.node_sample, minlength=targets.n_samples).astype(np.float64)
    node_mean = ad.segment_sum(weighted, targets.point_node, n_nodes) / Tensor(pts_per_node)
    sample_mean = ad.segment_sum(node_mean, targets.node_sample, targets.n_samples) / Tensor(nodes_per_sample)
    loss = ad.mean(sample_mean)
    trace = {"taus": taus, "eps": eps, "xt": xt}
    return loss, trace


def reverse_sample(p: Mapping[str, Tensor], cond, schedule: DiffusionSchedule, n_points: int,
                   seed: int) -> np.ndarray:
    """Ancestral sampling from unit Gaussian; returns (N, n_points, 3) absolute-frame clouds."""
    cond = np.asarray(cond.data if isinstance(cond, Tensor) else cond, dtype=np.float64)
    n = cond.shape[0]
    rng = seeded_rng(seed, 0x5A3)
    point_node = np.repeat(np.arange(n), n_points)
    x = rng.standard_normal((n * n_points, 3))
    with ad.no_grad():
        for t in range(schedule.steps, 0, -1):
            beta, alpha, ab = schedule.betas[t - 1], schedule.alphas[t - 1], schedule.alpha_bars[t - 1]
            eps_hat = predict_noise(p, x, np.full(len(x), t), cond, point_node).data
            mean = (x - beta / math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(alpha)
            if t > 1:
                ab_prev = schedule.alpha_bars[t - 2]
                var = beta * (1.0 - ab_prev) / (1.0 - ab)
                x = mean + math.sqrt(var) * rng.standard_normal(x.shape)
            else:
                x = mean
    return x.reshape(n, n_points, 3)
