"""AdamW, warm-up + cosine learning-rate schedule, global-norm clipping."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .params import ParamStore


@dataclass
class OptimizerConfig:
    base_lr: float = 1e-3
    weight_decay: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    warmup_epochs: int = 5
    total_epochs: int = 150
    clip_norm: float | None = None

    def __post_init__(self):
        if not 0 <= self.warmup_epochs <= self.total_epochs:
            raise ValueError("need 0 <= warmup_epochs <= total_epochs")
        if self.base_lr < 0:
            raise ValueError("base_lr must be nonnegative")


def cosine_lr(epoch: int, cfg: OptimizerConfig) -> float:
    if not 0 <= epoch < cfg.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.total_epochs})")
    if epoch < cfg.warmup_epochs:
        return cfg.base_lr * epoch / cfg.warmup_epochs
    span = cfg.total_epochs - 1 - cfg.warmup_epochs
    if span <= 0:
        return cfg.base_lr
    progress = (epoch - cfg.warmup_epochs) / span
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm > 0:
        scale = max_norm / total
        for k in grads:
            grads[k] = grads[k] * scale
    return total


def adamw_step(store: ParamStore, grads: dict[str, np.ndarray], cfg: OptimizerConfig, lr_now: float) -> ParamStore:
    """In-place AdamW update of the parameters named in ``grads``.

    Weight decay is decoupled: theta -= lr * wd * theta, then the
    bias-corrected Adam step. Parameters without a gradient are left alone.
    """
    b1, b2 = cfg.betas
    if cfg.clip_norm is not None:
        grads = dict(grads)
        clip_grad_norm(grads, cfg.clip_norm)
    for name, g in grads.items():
        if name not in store:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        theta = store[name]
        if g.shape != theta.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {theta.shape} for {name!r}")
        t = store.steps[name] + 1
        m = b1 * store.m[name] + (1.0 - b1) * g
        v = b2 * store.v[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        theta = theta - lr_now * cfg.weight_decay * theta
        theta = theta - lr_now * m_hat / (np.sqrt(v_hat) + cfg.eps)
        store.set(name, theta)
        store.m[name] = m
        store.v[name] = v
        store.steps[name] = t
    return store
