from __future__ import annotations

import math

import numpy as np
import pytest

from oracles import acc_permutations, ari_pairs, nmi_counts
from topolayout.metrics import (ari, cluster_acc, evaluate_embeddings, kmeans, layout_error, nmi, relation_labels,
                                scene_extent)

from conftest import small_sample


def test_kmeans_basics(rng):
    x = rng.normal(size=(30, 4))
    assert not kmeans(x, 1).any()
    blobs = np.r_[rng.normal(size=(20, 2)) * 0.01, rng.normal(size=(20, 2)) * 0.01 + 100]
    a = kmeans(blobs, 2, seed=3)
    assert len(set(a[:20])) == 1 and len(set(a[20:])) == 1 and a[0] != a[20]
    assert np.array_equal(kmeans(x, 4, seed=5), kmeans(x, 4, seed=5))
    assert set(kmeans(x, 4)) <= set(range(4))
    with pytest.raises(ValueError):
        kmeans(x[:2], 3)


def test_hand_cases():
    assert cluster_acc([0, 0, 1, 1], [0, 1, 1, 1]) == 0.75
    assert nmi([0, 0, 1, 1], [0, 1, 0, 1]) == 0.0
    # standard pair-counting ARI; see the acceptance suite for the -1/3 expectation
    assert ari([0, 0, 1, 1], [0, 1, 0, 1]) == -0.5
    assert ari([0, 0, 1, 1], [0, 0, 0, 0]) == 0.0


def test_identity_and_relabeling(rng):
    y = rng.integers(0, 4, 50)
    perm = rng.permutation(4)
    for c in (y, perm[y]):
        assert cluster_acc(y, c) == 1.0
        assert math.isclose(nmi(y, c), 1.0)
        assert math.isclose(ari(y, c), 1.0)
    assert nmi([0, 0, 0], [1, 1, 1]) == 1.0


def test_nmi_independent_labels_near_zero(rng):
    y, c = rng.integers(0, 2, 10_000), rng.integers(0, 2, 10_000)
    assert nmi(y, c) < 0.05


def test_against_oracles(rng):
    for _ in range(60):
        n = int(rng.integers(2, 30))
        y = rng.integers(0, int(rng.integers(1, 5)), n)
        c = rng.integers(0, int(rng.integers(1, 6)), n)
        assert cluster_acc(y, c) == acc_permutations(y, c)
        assert math.isclose(nmi(y, c), nmi_counts(y, c), rel_tol=1e-12, abs_tol=1e-12)
        assert ari(y, c) == ari_pairs(y, c)


def test_invariances(rng):
    for _ in range(50):
        y = rng.integers(0, 3, 25)
        c = rng.integers(0, 4, 25)
        pc = rng.permutation(4)[c]
        py = rng.permutation(3)[y]
        assert cluster_acc(y, pc) == cluster_acc(y, c)
        assert nmi(y, pc) == pytest.approx(nmi(y, c), abs=1e-12)
        assert ari(py, pc) == pytest.approx(ari(y, c), abs=1e-12)
        assert cluster_acc(y, c) >= 1 / len(set(c)) - 1e-12


def test_relation_labels_bins():
    r = np.zeros((6, 11))
    r[:, :3] = [[2, 0, 0], [-2, 0, 0], [0, 3, 1], [0, -3, 1], [0.1, 0, 4], [0, 0.2, -4]]
    assert relation_labels(r).tolist() == [1, 0, 3, 2, 5, 4]


def test_evaluate_embeddings_separable(rng):
    y = np.repeat(np.arange(3), 20)
    x = rng.normal(size=(60, 5)) * 0.01 + y[:, None] * 10.0
    s = evaluate_embeddings(x, y)
    assert s.acc == 1.0 and math.isclose(s.nmi, 1.0) and math.isclose(s.ari, 1.0)


def test_layout_error_cases(rng):
    s = small_sample(3)
    exact = {n.id: n.points for n in s.nodes}
    e = layout_error(exact, s)
    assert e.mean_centroid == 0.0 and e.mean_extent == 0.0
    shifted = {n.id: n.points + [1.0, 0.0, 0.0] for n in s.nodes}
    e = layout_error(shifted, s)
    assert all(v == pytest.approx(1.0, abs=1e-12) for v in e.centroid.values())
    rand = {n.id: rng.normal(size=(10, 3)) for n in s.nodes}
    e = layout_error(rand, s)
    want_c = np.mean([np.linalg.norm(rand[n.id].mean(0) - n.points.mean(0)) for n in s.nodes])
    want_e = np.mean([abs(np.log(np.ptp(rand[n.id], 0).max() / np.ptp(n.points, 0).max())) for n in s.nodes])
    assert e.mean_centroid == pytest.approx(want_c, rel=1e-12)
    assert e.mean_extent == pytest.approx(want_e, rel=1e-12)
    with pytest.raises(ValueError):
        layout_error({0: exact[0]}, s)


def test_scene_extent():
    s = small_sample(3)
    pts = np.concatenate([n.points for n in s.nodes])
    assert scene_extent(s) == np.ptp(pts, axis=0).max()
