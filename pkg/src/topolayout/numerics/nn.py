"""Dense layers, ReLU MLPs and a GRU cell built on the autodiff ops."""
from __future__ import annotations

from collections.abc import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .params import ParamStore


def init_linear(store: ParamStore, name: str, fan_in: int, fan_out: int,
                rng: np.random.Generator, bias: bool = True) -> None:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    store.add(f"{name}.W", rng.uniform(-bound, bound, size=(fan_in, fan_out)))
    if bias:
        store.add(f"{name}.b", np.zeros(fan_out))


def linear(p: Mapping[str, Tensor], name: str, x: Tensor) -> Tensor:
    y = ad.matmul(x, p[f"{name}.W"])
    b = p.get(f"{name}.b")
    return y + b if b is not None else y


def init_mlp(store: ParamStore, name: str, sizes: Sequence[int], rng: np.random.Generator) -> None:
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        init_linear(store, f"{name}.{i}", a, b, rng)


def mlp(p: Mapping[str, Tensor], name: str, x: Tensor, n_layers: int) -> Tensor:
    """ReLU between layers, none after the last."""
    for i in range(n_layers):
        x = linear(p, f"{name}.{i}", x)
        if i < n_layers - 1:
            x = ad.relu(x)
    return x


def init_gru(store: ParamStore, name: str, d_in: int, d: int, rng: np.random.Generator) -> None:
    # gate blocks ordered [update z | reset r | candidate n]
    init_linear(store, f"{name}.x", d_in, 3 * d, rng)
    init_linear(store, f"{name}.h", d, 3 * d, rng, bias=False)


def gru_cell(p: Mapping[str, Tensor], name: str, h_prev: Tensor, x: Tensor) -> Tensor:
    """h_new = z*h_prev + (1-z)*n with z=1 keeping the previous state.

    z = sigmoid(x Wz + h Uz + bz), r = sigmoid(x Wr + h Ur + br),
    n = tanh(x Wn + (r*h) Un + bn).
    """
    wx = p[f"{name}.x.W"]
    wh = p[f"{name}.h.W"]
    d = wh.shape[0]
    if h_prev.shape[-1] != d or x.shape[-1] != wx.shape[0] or h_prev.shape[0] != x.shape[0]:
        raise ValueError(f"gru_cell shape mismatch: h {h_prev.shape}, x {x.shape}, expected d={d}, d_in={wx.shape[0]}")
    gx = linear(p, f"{name}.x", x)
    gh_zr = ad.matmul(h_prev, ad.cols(wh, 0, 2 * d))
    z = ad.sigmoid(ad.cols(gx, 0, d) + ad.cols(gh_zr, 0, d))
    r = ad.sigmoid(ad.cols(gx, d, 2 * d) + ad.cols(gh_zr, d, 2 * d))
    n = ad.tanh(ad.cols(gx, 2 * d, 3 * d) + ad.matmul(r * h_prev, ad.cols(wh, 2 * d, 3 * d)))
    return z * h_prev + (1.0 - z) * n
