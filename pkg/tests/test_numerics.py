from __future__ import annotations

import math

import numpy as np
import pytest

from topolayout.numerics import autodiff as ad
from topolayout.numerics.autodiff import Tensor
from topolayout.numerics.gradcheck import finite_diff_check
from topolayout.numerics.nn import gru_cell, init_gru, init_mlp, mlp
from topolayout.numerics.optim import OptimizerConfig, adamw_step, clip_grad_norm, cosine_lr
from topolayout.numerics.params import ParamStore, load_checkpoint, save_checkpoint
from topolayout.numerics.rng import restore_rng, rng_state, seeded_rng


# ------------------------------------------------------------ GRU

def _gru_store(d_in, d, rng):
    s = ParamStore()
    init_gru(s, "g", d_in, d, rng)
    return s


def test_gru_saturated_update_gate_keeps_state(rng):
    s = _gru_store(3, 4, rng)
    b = s["g.x.b"].copy()
    b[:4] = 1e3
    s.set("g.x.b", b)
    h = rng.normal(size=(5, 4))
    out = gru_cell(s.bind(False), "g", Tensor(h), Tensor(rng.normal(size=(5, 3))))
    assert np.array_equal(out.data, h)


def test_gru_zero_weights_halves_state():
    s = ParamStore()
    s.add("g.x.W", np.zeros((1, 3)))
    s.add("g.x.b", np.zeros(3))
    s.add("g.h.W", np.zeros((1, 3)))
    h = np.array([[0.8], [-2.0]])
    out = gru_cell(s.bind(False), "g", Tensor(h), Tensor(np.ones((2, 1))))
    assert np.array_equal(out.data, 0.5 * h)


def test_gru_gradcheck(rng):
    s = _gru_store(3, 4, rng)
    h = rng.normal(size=(2, 4))
    x = rng.normal(size=(2, 3))
    target = rng.normal(size=(2, 4))

    def fn(p):
        y = gru_cell(p, "g", p["h"], p["x"])
        return ad.sum(ad.square(y - Tensor(target)))

    params = dict(s)
    params.update(h=h, x=x)
    assert finite_diff_check(fn, params) < 1e-6


def test_gru_shape_mismatch(rng):
    s = _gru_store(3, 4, rng)
    with pytest.raises(ValueError):
        gru_cell(s.bind(False), "g", Tensor(np.zeros((2, 5))), Tensor(np.zeros((2, 3))))


def test_mlp_gradcheck(rng):
    s = ParamStore()
    init_mlp(s, "m", [4, 6, 3], rng)
    x = rng.normal(size=(5, 4))

    def fn(p):
        return ad.sum(ad.square(mlp(p, "m", Tensor(x), 2)))

    assert finite_diff_check(fn, dict(s)) < 1e-6


# ------------------------------------------------------------ finite differences

def test_finite_diff_rejects_nonpositive_step(rng):
    with pytest.raises(ValueError):
        finite_diff_check(lambda p: ad.sum(p["w"]), {"w": rng.normal(size=3)}, h=0.0)


# ------------------------------------------------------------ AdamW and schedule

def _store(rng):
    s = ParamStore()
    s.add("a", rng.normal(size=(3, 2)))
    s.add("b", rng.normal(size=4))
    return s


def test_adamw_zero_grad_zero_decay_unchanged(rng):
    s = _store(rng)
    before = {k: v.copy() for k, v in s.items()}
    adamw_step(s, {k: np.zeros_like(v) for k, v in s.items()}, OptimizerConfig(weight_decay=0.0), 1e-3)
    assert all(np.array_equal(before[k], s[k]) for k in s)


def test_adamw_lr_zero_bit_identical(rng):
    s = _store(rng)
    before = {k: v.copy() for k, v in s.items()}
    adamw_step(s, {k: rng.normal(size=v.shape) for k, v in s.items()}, OptimizerConfig(), 0.0)
    assert all(np.array_equal(before[k], s[k]) for k in s)


def test_adamw_closed_form_from_known_moments(rng):
    s = _store(rng)
    cfg = OptimizerConfig(base_lr=1e-3, weight_decay=1e-4)
    theta = s["a"].copy()
    m0, v0 = rng.normal(size=(3, 2)), rng.uniform(0.1, 1.0, size=(3, 2))
    s.m["a"], s.v["a"], s.steps["a"] = m0.copy(), v0.copy(), 4
    g = rng.normal(size=(3, 2))
    lr = 7e-4
    adamw_step(s, {"a": g}, cfg, lr)
    m = 0.9 * m0 + 0.1 * g
    v = 0.999 * v0 + 0.001 * g ** 2
    t = 5
    want = theta * (1 - lr * 1e-4)
    want = want - lr * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(s["a"], want, rtol=1e-12, atol=1e-15)
    assert s.steps["a"] == 5 and s.steps["b"] == 0


def test_adamw_leaves_params_without_grad(rng):
    s = _store(rng)
    b = s["b"].copy()
    adamw_step(s, {"a": np.ones((3, 2))}, OptimizerConfig(weight_decay=0.5), 1e-2)
    assert np.array_equal(s["b"], b)
    with pytest.raises(KeyError):
        adamw_step(s, {"zz": np.ones(1)}, OptimizerConfig(), 1e-3)


def test_clip_grad_norm():
    g = {"a": np.array([3.0, 4.0])}
    assert clip_grad_norm(g, 1.0) == 5.0
    np.testing.assert_allclose(g["a"], [0.6, 0.8])


def test_cosine_lr_points():
    cfg = OptimizerConfig(base_lr=1e-3, warmup_epochs=5, total_epochs=150)
    assert cosine_lr(0, cfg) == 0.0
    assert cosine_lr(5, cfg) == 1e-3
    assert abs(cosine_lr(149, cfg)) < 1e-15
    assert cosine_lr(2, cfg) == pytest.approx(0.4e-3)
    with pytest.raises(ValueError):
        cosine_lr(150, cfg)
    with pytest.raises(ValueError):
        OptimizerConfig(warmup_epochs=10, total_epochs=5)


# ------------------------------------------------------------ params and checkpoints

def test_param_store_invariants(rng):
    s = _store(rng)
    with pytest.raises(KeyError):
        s.add("a", np.zeros(1))
    with pytest.raises(ValueError):
        s.set("a", np.zeros(5))
    assert list(s) == ["a", "b"]
    assert s.num_values() == 10


def test_checkpoint_roundtrip(tmp_path, rng):
    s = _store(rng)
    s.steps["a"] = 3
    s.m["a"] = rng.normal(size=(3, 2))
    save_checkpoint(tmp_path / "ck", s.arrays("x"), {"epoch": 2})
    arrays, meta = load_checkpoint(tmp_path / "ck")
    back = ParamStore.from_arrays(arrays, "x")
    assert meta == {"epoch": 2}
    for k in s:
        assert np.array_equal(back[k], s[k]) and np.array_equal(back.m[k], s.m[k])
        assert back.steps[k] == s.steps[k]
    blob = (tmp_path / "ck" / "blob.bin").read_bytes()
    assert len(blob) == 8 * sum(a.size for a in s.arrays("x").values())


def test_checkpoint_rejects_bad_manifest(tmp_path):
    (tmp_path / "ck").mkdir()
    (tmp_path / "ck" / "manifest.txt").write_text("nope\n")
    (tmp_path / "ck" / "blob.bin").write_bytes(b"")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "ck")


# ------------------------------------------------------------ RNG

def test_rng_repeatable_and_keyed():
    a = seeded_rng(5, 1).random(1000)
    assert np.array_equal(a, seeded_rng(5, 1).random(1000))
    assert not np.array_equal(a, seeded_rng(5, 2).random(1000))


def test_rng_uniform_mean():
    x = seeded_rng(11).random(100_000)
    sigma = math.sqrt(1 / 12 / len(x))
    assert abs(x.mean() - 0.5) < 4 * sigma


def test_rng_permutations_cover_all_orders():
    r = seeded_rng(3)
    seen = {tuple(r.permutation(5)) for _ in range(100_000)}
    assert len(seen) == 120


def test_rng_state_roundtrip():
    r = seeded_rng(9)
    r.random(17)
    st = rng_state(r)
    want = r.normal(size=50)
    assert np.array_equal(restore_rng(st).normal(size=50), want)
