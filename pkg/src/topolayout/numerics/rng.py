"""Seeded random streams.

All randomness goes through numpy's ``Generator`` on top of the counter-based
Philox bit generator; normals come from numpy's ziggurat sampler. Streams are
keyed by ``(seed, *keys)`` so independent consumers never share a cursor.
"""
from __future__ import annotations

import numpy as np


def seeded_rng(seed: int, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *[int(k) & 0xFFFFFFFF for k in keys]])
    return np.random.Generator(np.random.Philox(ss))


def rng_state(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state

    def plain(x):
        if isinstance(x, dict):
            return {k: plain(v) for k, v in x.items()}
        if isinstance(x, np.ndarray):
            return [int(v) for v in x.tolist()]
        if isinstance(x, np.integer):
            return int(x)
        return x

    return plain(state)


def restore_rng(state: dict) -> np.random.Generator:
    bg = np.random.Philox()
    st = {
        "bit_generator": state["bit_generator"],
        "state": {k: np.array(v, dtype=np.uint64) for k, v in state["state"].items()},
        "buffer": np.array(state["buffer"], dtype=np.uint64),
        "buffer_pos": state["buffer_pos"],
        "has_uint32": state["has_uint32"],
        "uinteger": state["uinteger"],
    }
    bg.state = st
    return np.random.Generator(bg)
