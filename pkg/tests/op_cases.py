"""Probe functions covering every differentiable primitive of the autodiff engine."""
from __future__ import annotations

import numpy as np

from topolayout.numerics import autodiff as ad

R = np.random.default_rng(7)
W = R.normal(size=(4, 3))
X = R.normal(size=(5, 4))
POS = R.uniform(0.5, 2.0, size=(5, 4))
PROBE = R.normal(size=(5, 3))


UNARY_CASES = {
    "neg": lambda t: ad.neg(t),
    "square": lambda t: ad.square(t),
    "relu": lambda t: ad.relu(t),
    "sigmoid": lambda t: ad.sigmoid(t),
    "tanh": lambda t: ad.tanh(t),
    "exp": lambda t: ad.exp(t),
    "log": lambda t: ad.log(ad.square(t) + 1.0),
    "sqrt": lambda t: ad.sqrt(ad.square(t) + 0.5),
    "sum_axis": lambda t: ad.sum(t, axis=0),
    "mean_axis": lambda t: ad.mean(t, axis=1, keepdims=True),
    "log_softmax": lambda t: ad.log_softmax(t, axis=1),
    "softmax": lambda t: ad.softmax(t, axis=1),
    "l2_normalize": lambda t: ad.l2_normalize(t),
    "cols": lambda t: ad.cols(t, 1, 3),
    "reshape": lambda t: ad.reshape(t, (4, 5)),
    "transpose": lambda t: ad.transpose(t),
    "take_rows": lambda t: ad.take_rows(t, [0, 2, 2, 4]),
    "segment_sum": lambda t: ad.segment_sum(t, [0, 1, 1, 0, 2], 3),
    "segment_max": lambda t: ad.segment_max(t, [0, 2, 5]),
    "sum_all": lambda t: ad.sum(t),
    "mean_all": lambda t: ad.mean(t),
}


BINARY_CASES = {
    "add_broadcast": lambda a, b: a + ad.sum(b, axis=0),
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
    "matmul": lambda a, b: ad.matmul(a, ad.transpose(b)),
    "concat": lambda a, b: ad.concat([a, b], axis=1),
    "operators": lambda a, b: (2.0 - a) * 3.0 + 1.0 / (b + 1.0) - (-a) @ ad.transpose(b) @ a,
    "scatter_rows": lambda a, b: ad.scatter_rows(a, [1, 3], ad.take_rows(b, [0, 4])),
}
