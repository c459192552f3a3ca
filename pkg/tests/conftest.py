from __future__ import annotations

import numpy as np
import pytest

from topolayout.scene import SceneNode, compute_descriptor, make_sample


def blob_node(node_id: int, centre, n: int = 24, spread: float = 0.3, seed: int = 0, category: int = 0):
    rng = np.random.default_rng([seed, node_id])
    pts = rng.normal(size=(n, 3)) * spread + np.asarray(centre, dtype=np.float64)
    return SceneNode(node_id, pts, compute_descriptor(pts), category)


def chain_sample(n_nodes: int, seed: int = 0, n_points: int = 16, anchor: int = 0):
    nodes = [blob_node(i, [1.5 * i, 0.2 * i, 0.0], n_points, seed=seed, category=i % 3) for i in range(n_nodes)]
    return make_sample(nodes, [(i, i + 1) for i in range(n_nodes - 1)], anchor)


def small_sample(n_nodes: int = 3, seed: int = 0, n_points: int = 32):
    """Fully connected little subgraph with alternating edge directions."""
    rng = np.random.default_rng(seed)
    nodes = [blob_node(i, rng.uniform(-2, 2, size=3), n_points, 0.25, seed, i % 6) for i in range(n_nodes)]
    pairs = [(a, b) if (a + b) % 2 else (b, a) for a in range(n_nodes) for b in range(a + 1, n_nodes)]
    return make_sample(nodes, pairs, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criterion number -> (passed, one-line summary); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}
ACCEPTANCE_TOTAL = 11


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, ACCEPTANCE_TOTAL + 1):
        if n in ACCEPTANCE:
            ok, text = ACCEPTANCE[n]
            terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {text}")
        else:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN")
