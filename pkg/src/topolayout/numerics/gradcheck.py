"""Central finite-difference gradient checking."""
from __future__ import annotations

from collections.abc import Callable, Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def finite_diff_check(fn: Callable[[Mapping[str, Tensor]], Tensor],
                      params: Mapping[str, np.ndarray], h: float = 1e-5,
                      max_coords: int | None = None, seed: int = 0,
                      return_worst: bool = False):
    """Worst relative error between backprop and central differences.

    ``fn`` maps a name -> Tensor binding to a scalar Tensor and must be
    deterministic. The relative error of a coordinate is
    |a - n| / max(|a|, |n|, 1e-8). With ``max_coords`` only that many
    randomly chosen coordinates per parameter are probed.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    leaves = {k: Tensor(v, requires_grad=True, name=k) for k, v in base.items()}
    analytic = ad.backward(fn(leaves), wrt=list(base))
    rng = np.random.default_rng(seed)
    worst, where = 0.0, None
    with ad.no_grad():
        for name, arr in base.items():
            flat_idx = np.arange(arr.size)
            if max_coords is not None and arr.size > max_coords:
                flat_idx = rng.choice(arr.size, size=max_coords, replace=False)
            ga = np.broadcast_to(analytic.get(name, np.zeros(arr.shape)), arr.shape).reshape(-1)
            for i in flat_idx:
                vals = []
                for sgn in (1.0, -1.0):
                    pert = arr.copy().reshape(-1)
                    pert[i] += sgn * h
                    binding = {k: Tensor(v) for k, v in base.items()}
                    binding[name] = Tensor(pert.reshape(arr.shape))
                    vals.append(float(fn(binding).data))
                num = (vals[0] - vals[1]) / (2.0 * h)
                err = abs(ga[i] - num) / max(abs(ga[i]), abs(num), 1e-8)
                if err > worst:
                    worst, where = err, (name, int(i), float(ga[i]), num)
    return (worst, where) if return_worst else worst
