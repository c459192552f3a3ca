"""11-value spatial descriptors and the relative edge geometry between them."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Scale fields are floored at this value (metres, or m^3 for volume) before
# taking log-ratios, so degenerate flat objects stay representable.
SCALE_FLOOR = 1e-6


@dataclass(frozen=True)
class SpatialDescriptor:
    centroid: np.ndarray  # (3,)
    std: np.ndarray  # (3,), population form
    extent: np.ndarray  # (3,)
    volume: float
    max_length: float

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.centroid, self.std, self.extent, [self.volume, self.max_length]])

    @classmethod
    def from_array(cls, a) -> "SpatialDescriptor":
        a = np.asarray(a, dtype=np.float64)
        if a.shape != (11,):
            raise ValueError(f"descriptor needs 11 values, got shape {a.shape}")
        return cls(a[0:3].copy(), a[3:6].copy(), a[6:9].copy(), float(a[9]), float(a[10]))

    def __eq__(self, other) -> bool:
        return isinstance(other, SpatialDescriptor) and np.array_equal(self.to_array(), other.to_array())


def compute_descriptor(points) -> SpatialDescriptor:
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(p) == 0:
        raise ValueError("descriptor of an empty point set")
    c = p.mean(axis=0)
    std = np.sqrt(((p - c) ** 2).mean(axis=0))
    e = p.max(axis=0) - p.min(axis=0)
    return SpatialDescriptor(c, std, e, float(np.prod(e)), float(e.max()))


@dataclass(frozen=True)
class EdgeGeometry:
    """Relative geometry r_ij: centroid offset plus log-ratios of every scale field."""

    dpos: np.ndarray  # (3,)
    dstd: np.ndarray  # (3,)
    dextent: np.ndarray  # (3,)
    dvol: float
    dlen: float

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.dpos, self.dstd, self.dextent, [self.dvol, self.dlen]])

    @classmethod
    def from_array(cls, a) -> "EdgeGeometry":
        a = np.asarray(a, dtype=np.float64)
        if a.shape != (11,):
            raise ValueError(f"edge geometry needs 11 values, got shape {a.shape}")
        return cls(a[0:3].copy(), a[3:6].copy(), a[6:9].copy(), float(a[9]), float(a[10]))

    def reversed(self) -> "EdgeGeometry":
        return EdgeGeometry.from_array(-self.to_array())

    def __eq__(self, other) -> bool:
        return isinstance(other, EdgeGeometry) and np.array_equal(self.to_array(), other.to_array())


def _floor(x):
    return np.maximum(x, SCALE_FLOOR)


def relative_geometry(s_i: SpatialDescriptor, s_j: SpatialDescriptor) -> EdgeGeometry:
    a, b = s_i.to_array(), s_j.to_array()
    r = np.empty(11)
    r[:3] = b[:3] - a[:3]
    r[3:] = np.log(_floor(b[3:]) / _floor(a[3:]))
    return EdgeGeometry.from_array(r)


def apply_geometry(s_i: SpatialDescriptor, r: EdgeGeometry) -> SpatialDescriptor:
    """s_i (+) r_ij. Scale fields come back floored at SCALE_FLOOR."""
    a, ra = s_i.to_array(), r.to_array()
    out = np.empty(11)
    out[:3] = a[:3] + ra[:3]
    out[3:] = _floor(a[3:]) * np.exp(ra[3:])
    return SpatialDescriptor.from_array(out)


def floored(s: SpatialDescriptor) -> SpatialDescriptor:
    a = s.to_array()
    a[3:] = _floor(a[3:])
    return SpatialDescriptor.from_array(a)
