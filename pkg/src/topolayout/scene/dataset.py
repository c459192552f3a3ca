"""Scene -> subgraph sample pipeline."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

from ..numerics.rng import seeded_rng
from .graph import (SubgraphSample, abstract_nodes, generate_edges, make_sample, partition_subgraphs,
                    select_anchor, validate_sample)
from .io import read_sample, write_sample
from .synth import LabeledPointCloud, SceneSpec, generate_scene

log = logging.getLogger(__name__)


@dataclass
class GraphPrepConfig:
    tau_pts: int = 512
    k_min: int = 3
    rho_min: float = 0.0
    rho_max: float = 0.5
    excluded_ids: frozenset = field(default_factory=frozenset)


def samples_from_scene(cloud: LabeledPointCloud, cfg: GraphPrepConfig, seed: int) -> list[SubgraphSample]:
    nodes = abstract_nodes(cloud, cfg.tau_pts, cfg.excluded_ids)
    if len(nodes) < max(cfg.k_min, 2):
        return []
    by_id = {n.id: n for n in nodes}
    rng = seeded_rng(seed, 0x5A3)
    out = []
    for part_no, ids in enumerate(partition_subgraphs(nodes, cfg.k_min)):
        rho = float(rng.uniform(cfg.rho_min, cfg.rho_max))
        part_nodes = [by_id[i] for i in sorted(ids)]
        pairs = generate_edges(ids, rho, int(rng.integers(2**31)))
        sample = make_sample(part_nodes, pairs, part_nodes[0].id)
        sample.anchor = select_anchor(sample, int(rng.integers(2**31)))
        validate_sample(sample, cfg.k_min)
        sample.meta = {"scene_seed": seed, "part": part_no, "rho": rho}
        out.append(sample)
    return out


def build_dataset(spec: SceneSpec, cfg: GraphPrepConfig, seed: int,
                  n_scenes: int | None = None, n_samples: int | None = None) -> list[SubgraphSample]:
    """Generate scenes until ``n_scenes`` are used or ``n_samples`` samples exist."""
    if n_scenes is None and n_samples is None:
        raise ValueError("give n_scenes or n_samples")
    samples: list[SubgraphSample] = []
    scene = 0
    while True:
        if n_scenes is not None and scene >= n_scenes:
            break
        if n_samples is not None and len(samples) >= n_samples:
            break
        if n_scenes is None and scene > 100 * max(n_samples, 1):
            raise RuntimeError("scene generation yields no usable samples; check tau_pts/k_min")
        cloud = generate_scene(spec, seed * 100003 + scene)
        samples.extend(samples_from_scene(cloud, cfg, seed * 100003 + scene))
        scene += 1
    if n_samples is not None:
        samples = samples[:n_samples]
    return samples


def save_dataset(directory, samples: list[SubgraphSample]) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, s in enumerate(samples):
        p = directory / f"sample_{k:05d}.json"
        write_sample(p, s)
        paths.append(p)
    return paths


def load_dataset(directory) -> list[SubgraphSample]:
    paths = sorted(Path(directory).glob("sample_*.json"))
    if not paths:
        raise FileNotFoundError(f"no sample_*.json files in {directory}")
    return [read_sample(p) for p in paths]
