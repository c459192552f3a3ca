from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from topolayout import sma
from topolayout.numerics import autodiff as ad
from topolayout.numerics.autodiff import Tensor
from topolayout.numerics.params import ParamStore
from topolayout.sma import (DEFAULT_PAIRS, DEFAULT_VIEWS, DistillBank, ViewFeatures, ViewSpec, build_view,
                            build_views, distill_loss, ema_update, make_teacher, queue_push, queue_view,
                            sinkhorn, swav_loss, total_loss, warmup_queues)

from conftest import small_sample
from oracles import sinkhorn_reference


# ------------------------------------------------------------ views

def test_view_spec_validation():
    with pytest.raises(ValueError):
        ViewSpec("student", "origin", 1.5, 0.0, "x")
    with pytest.raises(ValueError):
        ViewSpec("student", "origin", 0.0, -0.1, "x")
    with pytest.raises(ValueError):
        ViewSpec("observer", "origin", 0.0, 0.0, "x")


def test_default_table():
    got = {v.tag: (v.point_mask_ratio, v.edge_mask_ratio, v.source, v.role) for v in DEFAULT_VIEWS}
    assert got == {"S1": (0.8, 0.2, "origin", "student"), "S2": (0.8, 0.6, "augmented", "student"),
                   "S3": (0.8, 0.6, "origin", "student"), "T6": (0.2, 0.2, "origin", "teacher"),
                   "T5": (0.1, 0.1, "augmented", "teacher")}
    assert DEFAULT_PAIRS == (("T6", "S2"), ("T5", "S3"), ("T5", "S1"), ("T6", "S3"))


def test_identity_view():
    s = small_sample(4)
    v = build_view(s, ViewSpec("student", "origin", 0.0, 0.0, "id"), seed=3)
    assert [n.id for n in v.nodes] == [n.id for n in s.nodes]
    assert all(np.array_equal(a.points, b.points) for a, b in zip(v.nodes, s.nodes))
    assert v.edges == s.edges and v.anchor == s.anchor


def test_edge_mask_count():
    s = small_sample(5)  # 10 edges
    v = build_view(s, ViewSpec("student", "origin", 0.0, 0.6, "e"), seed=1)
    assert len(s.edges) == 10 and len(v.edges) == 4
    assert set(v.edge_pairs()) <= set(s.edge_pairs())


def test_point_mask_counts_and_floor():
    s = small_sample(3, n_points=50)
    v = build_view(s, ViewSpec("student", "origin", 0.8, 0.0, "p"), seed=2)
    assert all(len(n.points) == 50 - 40 for n in v.nodes)
    tiny = small_sample(3, n_points=12)
    v = build_view(tiny, ViewSpec("student", "origin", 0.9, 0.0, "p"), seed=2)
    assert all(len(n.points) == sma.MIN_VIEW_POINTS for n in v.nodes)
    for a, b in zip(v.nodes, tiny.nodes):
        rows = {tuple(r) for r in b.points}
        assert all(tuple(r) in rows for r in a.points)


def test_views_deterministic_per_seed():
    s = small_sample(4)
    a, b, c = build_views(s, seed=7), build_views(s, seed=7), build_views(s, seed=8)
    for tag in a:
        assert a[tag].edge_pairs() == b[tag].edge_pairs()
        assert all(np.array_equal(x.points, y.points) for x, y in zip(a[tag].nodes, b[tag].nodes))
    assert any(not np.array_equal(x.points, y.points) for x, y in zip(a["S2"].nodes, c["S2"].nodes))


def test_augmented_view_scale_bounded():
    s = small_sample(3, n_points=64)
    v = build_view(s, ViewSpec("teacher", "augmented", 0.0, 0.0, "a"), seed=0)
    for a, b in zip(v.nodes, s.nodes):
        assert len(a.points) == len(b.points)
        ratio = a.descriptor.max_length / b.descriptor.max_length
        assert 0.8 < ratio < 1.2


# ------------------------------------------------------------ EMA

def _pair(rng):
    stu = ParamStore()
    stu.add("enc.W", rng.normal(size=(3, 4)))
    stu.add("enc.b", rng.normal(size=4))
    stu.add("pred.obj.0.W", rng.normal(size=(4, 4)))
    tea = make_teacher(stu)
    for k in tea:
        tea.set(k, rng.normal(size=tea[k].shape))
    return stu, tea


def test_ema_limits(rng):
    stu, tea = _pair(rng)
    before = {k: tea[k].copy() for k in tea}
    ema_update(stu, tea, 1.0)
    assert all(np.array_equal(tea[k], before[k]) for k in tea)
    ema_update(stu, tea, 0.0)
    assert all(np.array_equal(tea[k], stu[k]) for k in tea)
    assert "pred.obj.0.W" not in tea


def test_ema_closed_form(rng):
    stu, tea = _pair(rng)
    xi0 = {k: tea[k].copy() for k in tea}
    alpha, n = 0.9, 25
    for _ in range(n):
        ema_update(stu, tea, alpha)
    for k in tea:
        want = alpha ** n * xi0[k] + (1 - alpha ** n) * stu[k]
        np.testing.assert_allclose(tea[k], want, rtol=0, atol=1e-12)


def test_ema_rejects_mismatch(rng):
    stu, tea = _pair(rng)
    tea.add("extra", np.zeros(2))
    with pytest.raises(ValueError):
        ema_update(stu, tea, 0.5)
    stu, _ = _pair(rng)
    bad = ParamStore()
    bad.add("enc.W", np.zeros((4, 3)))
    bad.add("enc.b", np.zeros(4))
    with pytest.raises(ValueError):
        ema_update(stu, bad, 0.5)


# ------------------------------------------------------------ Sinkhorn

def test_sinkhorn_uniform_input():
    q = sinkhorn(np.full((6, 4), 0.3))
    np.testing.assert_allclose(q, 0.25, rtol=0, atol=1e-12)


def test_sinkhorn_rows_and_columns(rng):
    for _ in range(10):
        q, trace = sinkhorn(rng.normal(size=(8, 16)), return_trace=True)
        assert all(math.fsum(row) == 1.0 and row.sum() == 1.0 for row in q)
        assert all(b <= a for a, b in zip(trace, trace[1:]))


def test_sinkhorn_extreme_scores_stay_finite():
    q = sinkhorn(np.array([[1e4, -1e4, 0.0], [0.0, 5e3, -5e3]]))
    assert np.all(np.isfinite(q)) and np.all(q.sum(axis=1) == 1.0)
    with pytest.raises(ValueError):
        sinkhorn(np.array([[np.nan, 0.0]]))


def test_sinkhorn_two_by_two_against_long_run(rng):
    scores = np.array([[0.3, 0.0], [0.25, 0.0]])
    q, trace = sinkhorn(scores, return_trace=True)
    ref = sinkhorn_reference(scores, 0.05, 200)
    gap = np.abs(q - ref).max()
    print(f"2x2 sinkhorn: 10 vs 200 iterations max abs diff {gap:.3e}")
    assert gap < 1e-3
    assert all(b < a for a, b in zip(trace, trace[1:]))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 9), st.integers(1, 9)),
              elements=st.floats(-3, 3, allow_nan=False)))
def test_sinkhorn_properties(scores):
    q, trace = sinkhorn(scores, return_trace=True)
    assert np.all(q >= 0) and all(row.sum() == 1.0 for row in q)
    assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))


# ------------------------------------------------------------ queues

def test_queue_fifo(rng):
    bank = DistillBank.create(dim=3, capacity=10)
    items = [rng.normal(size=(4, 3)) for _ in range(4)]
    queue_push(bank, "obj", items[0])
    assert len(queue_view(bank, "obj")) == 4
    for x in items[1:]:
        queue_push(bank, "obj", x)
    flat = list(np.concatenate(items))
    want = flat[-10:]  # list simulation: oldest six evicted
    assert np.array_equal(queue_view(bank, "obj"), np.array(want))
    with pytest.raises(ValueError):
        queue_push(bank, "obj", np.zeros((2, 4)))
    assert bank.queues["trip"].dim == 9


def test_warmup_consumes_expected_batches(rng):
    bank = DistillBank.create(dim=2, capacity=25)
    sizes = {"obj": 4, "edge": 3, "trip": 5}
    stream = ({lv: rng.normal(size=(b, 6 if lv == "trip" else 2)) for lv, b in sizes.items()} for _ in range(100))
    used = warmup_queues(bank, stream)
    assert bank.full() and all(len(q) == 25 for q in bank.queues.values())
    assert used == max(math.ceil(25 / b) for b in sizes.values())


def test_warmup_partial_warns(rng, caplog):
    bank = DistillBank.create(dim=2, capacity=50)
    used = warmup_queues(bank, [{"obj": rng.normal(size=(3, 2))}])
    assert used == 1 and len(bank.queues["obj"]) == 3
    assert "ran out" in caplog.text


def test_bank_arrays_roundtrip(rng):
    bank = DistillBank.create(dim=2, capacity=5)
    queue_push(bank, "edge", rng.normal(size=(3, 2)))
    other = DistillBank.create(dim=2, capacity=5)
    other.load_arrays(bank.arrays())
    assert np.array_equal(queue_view(other, "edge"), queue_view(bank, "edge"))


# ------------------------------------------------------------ SwAV loss

def _proto(k, d, rng):
    return sma._normalize_rows(rng.normal(size=(k, d)))


def test_swav_hand_log2():
    bank = DistillBank.create(dim=2, capacity=0)
    loss, _ = swav_loss(Tensor(np.array([[1.0, 1.0]])), np.array([[1.0, 0.0]]), Tensor(np.eye(2)), bank, "obj",
                        targets=np.array([[0.5, 0.5]]))
    assert abs(loss.item() - math.log(2)) < 1e-12


def test_swav_one_hot_limit():
    bank = DistillBank.create(dim=2, capacity=0)
    loss, trace = swav_loss(Tensor(np.array([[1.0, 0.0]])), np.zeros((1, 2)), Tensor(np.array([[1.0, 0.0], [-1.0, 0.0]])),
                            bank, "obj", targets=np.array([[1.0, 0.0]]))
    assert trace["p"][0, 0] >= 1 - 1e-7 and loss.item() <= 1e-6


def test_swav_queue_only_shapes_codes(rng):
    d, b = 4, 3
    bank = DistillBank.create(dim=d, capacity=6)
    queue_push(bank, "obj", sma._normalize_rows(rng.normal(size=(6, d))))
    zs, zt, c = rng.normal(size=(b, d)), rng.normal(size=(b, d)), _proto(5, d, rng)
    loss, trace = swav_loss(Tensor(zs), zt, Tensor(c), bank, "obj")
    assert trace["q"].shape == (b, 5)
    # re-pushing the same support leaves the codes and the loss unchanged
    queue_push(bank, "obj", queue_view(bank, "obj").copy())
    again, _ = swav_loss(Tensor(zs), zt, Tensor(c), bank, "obj")
    assert again.item() == loss.item()
    # with codes pinned, queue contents cannot reach the loss sum
    queue_push(bank, "obj", rng.normal(size=(6, d)))
    pinned, _ = swav_loss(Tensor(zs), zt, Tensor(c), bank, "obj", targets=trace["q"])
    assert pinned.item() == loss.item()
    with pytest.raises(ValueError):
        swav_loss(Tensor(zs), zt, Tensor(c), bank, "trip")


def test_swav_gradient_reaches_student_only(rng):
    d = 4
    bank = DistillBank.create(dim=d, capacity=0)
    zs = Tensor(rng.normal(size=(3, d)), requires_grad=True, name="zs")
    c = Tensor(_proto(5, d, rng), requires_grad=True, name="C")
    loss, _ = swav_loss(zs, rng.normal(size=(3, d)), c, bank, "obj")
    grads = ad.backward(loss)
    assert set(grads) == {"zs", "C"}


# ------------------------------------------------------------ distillation

def _features(rng, n=3, d=4):
    obj = rng.normal(size=(n, d))
    src, dst = np.array([0, 1, 2]), np.array([1, 2, 0])
    edge = rng.normal(size=(3, d))
    keys = [(0, int(a), int(b)) for a, b in zip(src, dst)]
    return lambda: ViewFeatures(Tensor(obj), Tensor(edge), src, dst, list(keys))


def _protos(d, rng):
    return {f"proto.{lv}": Tensor(_proto(k, w, rng)) for lv, k, w in (("obj", 6, d), ("edge", 4, d), ("trip", 5, 3 * d))}


def test_distill_self_consistency_and_additivity(rng):
    d = 4
    make = _features(rng, d=d)
    tags = ("S1", "S2", "S3", "T5", "T6")
    views = {t: make() for t in tags}
    p = _protos(d, rng)
    bank = DistillBank.create(dim=d, capacity=0)
    total, per = distill_loss(p, views, views, bank, use_predictor=False)
    f = make()
    once = sum(swav_loss(z, z.data, p[f"proto.{lv}"], bank, lv)[0].item()
               for lv, z in (("obj", f.obj), ("edge", f.edge), ("trip", f.triplet(np.arange(3)))))
    assert total.item() == pytest.approx(4 * once, rel=1e-12)
    for pair in DEFAULT_PAIRS:
        rest = tuple(x for x in DEFAULT_PAIRS if x != pair)
        alone = distill_loss(p, views, views, bank, pairs=(pair,), use_predictor=False)[0].item()
        without = distill_loss(p, views, views, bank, pairs=rest, use_predictor=False)[0].item()
        assert total.item() - without == pytest.approx(alone, rel=1e-12)


def test_distill_disjoint_edges_drop_terms(rng, caplog):
    d = 4
    make = _features(rng, d=d)
    stu, tea = make(), make()
    tea.edge_keys = [(1, 9, 9)] * 3
    bank = DistillBank.create(dim=d, capacity=0)
    p = _protos(d, rng)
    total, per = distill_loss(p, {"S": stu}, {"T": tea}, bank, pairs=(("T", "S"),), use_predictor=False)
    assert set(per) == {("T", "S", "obj")}
    assert "no edge survives" in caplog.text


def test_distill_mse_mode_and_errors(rng):
    d = 4
    make = _features(rng, d=d)
    views = {"S": make(), "T": make()}
    p = _protos(d, rng)
    bank = DistillBank.create(dim=d, capacity=0)
    zero, _ = distill_loss(p, views, views, bank, pairs=(("T", "S"),), use_predictor=False, mode="mse")
    assert zero.item() == pytest.approx(0.0, abs=1e-24)
    with pytest.raises(ValueError):
        distill_loss(p, views, views, bank, pairs=(("T", "S"),), use_predictor=False, mode="dino")


def test_total_loss():
    g, dl = Tensor(np.array(2.0)), Tensor(np.array(3.0))
    assert total_loss(g, dl, 0.0) is g
    assert total_loss(g, dl, 0.1).item() == pytest.approx(2.3, abs=1e-15)
    with pytest.raises(ValueError):
        total_loss(Tensor(np.array(np.inf)), dl)
