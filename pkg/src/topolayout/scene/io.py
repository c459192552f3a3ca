"""Sample file format: one JSON document, floats written with 17 significant digits.

Top-level fields, in order: ``version``, ``num_nodes``, ``num_edges``,
``nodes`` (id, descriptor[11], points[[x,y,z],...], category_id),
``edges`` (src, dst, r[11]), ``anchor``.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .descriptors import EdgeGeometry, SpatialDescriptor
from .graph import SceneNode, SubgraphSample

SAMPLE_VERSION = 1


class SampleFormatError(ValueError):
    def __init__(self, path, msg: str, line: int | None = None, field: str | None = None):
        where = f"{path}" + (f":{line}" if line is not None else "") + (f" [{field}]" if field else "")
        super().__init__(f"{where}: {msg}")
        self.line = line
        self.field = field


def _num(x: float) -> str:
    return format(float(x), ".17g")


def _vec(v) -> str:
    return "[" + ", ".join(_num(x) for x in v) + "]"


def dumps_sample(sample: SubgraphSample) -> str:
    out = ["{", f'  "version": {SAMPLE_VERSION},',
           f'  "num_nodes": {len(sample.nodes)},', f'  "num_edges": {len(sample.edges)},', '  "nodes": [']
    for k, n in enumerate(sample.nodes):
        pts = ", ".join(_vec(p) for p in n.points)
        sep = "," if k < len(sample.nodes) - 1 else ""
        out.append(f'    {{"id": {int(n.id)}, "descriptor": {_vec(n.descriptor.to_array())}, '
                   f'"points": [{pts}], "category_id": {int(n.category_id)}}}{sep}')
    out.append("  ],")
    out.append('  "edges": [')
    for k, (s, d, r) in enumerate(sample.edges):
        sep = "," if k < len(sample.edges) - 1 else ""
        out.append(f'    {{"src": {int(s)}, "dst": {int(d)}, "r": {_vec(r.to_array())}}}{sep}')
    out.append("  ],")
    out.append(f'  "anchor": {int(sample.anchor)}')
    out.append("}")
    return "\n".join(out) + "\n"


def write_sample(path, sample: SubgraphSample) -> None:
    Path(path).write_text(dumps_sample(sample), encoding="utf-8")


def _field(obj: dict, key: str, path, ctx: str):
    if not isinstance(obj, dict) or key not in obj:
        raise SampleFormatError(path, f"missing field '{key}'", field=f"{ctx}{key}")
    return obj[key]


def _floats(val, n: int | None, path, ctx: str) -> np.ndarray:
    try:
        arr = np.asarray(val, dtype=np.float64)
    except (TypeError, ValueError):
        raise SampleFormatError(path, "expected numbers", field=ctx) from None
    if n is not None and arr.shape != (n,):
        raise SampleFormatError(path, f"expected {n} numbers, got shape {arr.shape}", field=ctx)
    return arr


def loads_sample(text: str, path="<string>") -> SubgraphSample:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SampleFormatError(path, exc.msg, line=exc.lineno) from None
    version = _field(doc, "version", path, "")
    if version != SAMPLE_VERSION:
        raise SampleFormatError(path, f"unsupported version {version!r}", field="version")
    nodes = []
    for k, nd in enumerate(_field(doc, "nodes", path, "")):
        ctx = f"nodes[{k}]."
        pts = _floats(_field(nd, "points", path, ctx), None, path, ctx + "points")
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise SampleFormatError(path, "points must be a list of [x, y, z]", field=ctx + "points")
        desc = SpatialDescriptor.from_array(_floats(_field(nd, "descriptor", path, ctx), 11, path, ctx + "descriptor"))
        nodes.append(SceneNode(int(_field(nd, "id", path, ctx)), pts, desc, int(_field(nd, "category_id", path, ctx))))
    edges = []
    for k, ed in enumerate(_field(doc, "edges", path, "")):
        ctx = f"edges[{k}]."
        r = EdgeGeometry.from_array(_floats(_field(ed, "r", path, ctx), 11, path, ctx + "r"))
        edges.append((int(_field(ed, "src", path, ctx)), int(_field(ed, "dst", path, ctx)), r))
    if _field(doc, "num_nodes", path, "") != len(nodes):
        raise SampleFormatError(path, "num_nodes does not match nodes list", field="num_nodes")
    if _field(doc, "num_edges", path, "") != len(edges):
        raise SampleFormatError(path, "num_edges does not match edges list", field="num_edges")
    return SubgraphSample(nodes, edges, int(_field(doc, "anchor", path, "")))


def read_sample(path) -> SubgraphSample:
    return loads_sample(Path(path).read_text(encoding="utf-8"), path)


def samples_equal(a: SubgraphSample, b: SubgraphSample) -> bool:
    if a.anchor != b.anchor or len(a.nodes) != len(b.nodes) or len(a.edges) != len(b.edges):
        return False
    for na, nb in zip(a.nodes, b.nodes):
        if (na.id != nb.id or na.category_id != nb.category_id or na.descriptor != nb.descriptor
                or not np.array_equal(na.points, nb.points)):
            return False
    return all(sa == sb and da == db and ra == rb for (sa, da, ra), (sb, db, rb) in zip(a.edges, b.edges))
