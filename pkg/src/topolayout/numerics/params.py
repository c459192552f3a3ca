"""Named parameter storage, optimizer state and the checkpoint blob format."""
from __future__ import annotations

import json
from collections.abc import Iterator, Mapping
from pathlib import Path

import numpy as np

from .autodiff import Tensor

CHECKPOINT_MAGIC = "toll-ckpt 1"


class ParamStore(Mapping):
    """Ordered name -> float64 array mapping with per-parameter AdamW state.

    Shapes are fixed at creation; ``set`` refuses a shape change.
    """

    def __init__(self):
        self._data: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.steps: dict[str, int] = {}

    def __getitem__(self, name: str) -> np.ndarray:
        return self._data[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._data)

    def __len__(self) -> int:
        return len(self._data)

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self._data:
            raise KeyError(f"parameter {name!r} already exists")
        arr = np.array(value, dtype=np.float64)
        self._data[name] = arr
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)
        self.steps[name] = 0
        return arr

    def set(self, name: str, value: np.ndarray) -> None:
        arr = np.asarray(value, dtype=np.float64)
        if arr.shape != self._data[name].shape:
            raise ValueError(f"shape of {name!r} is immutable: {self._data[name].shape} vs {arr.shape}")
        self._data[name] = arr.copy()

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self._data.items()}

    def bind(self, grad: bool = True) -> dict[str, Tensor]:
        """Leaf tensors for one forward pass (``grad=False`` for read-only use)."""
        return {k: Tensor(v, requires_grad=grad, name=k) for k, v in self._data.items()}

    def subset(self, exclude_prefixes: tuple[str, ...] = ()) -> "ParamStore":
        out = ParamStore()
        for k, v in self._data.items():
            if not k.startswith(exclude_prefixes):
                out.add(k, v)
        return out

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for k, v in self._data.items():
            out.add(k, v)
            out.m[k] = self.m[k].copy()
            out.v[k] = self.v[k].copy()
            out.steps[k] = self.steps[k]
        return out

    def num_values(self) -> int:
        return int(sum(v.size for v in self._data.values()))

    # -- flat (de)serialisation used by checkpoints
    def arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for k, v in self._data.items():
            out[f"{prefix}/param/{k}"] = v
            out[f"{prefix}/m/{k}"] = self.m[k]
            out[f"{prefix}/v/{k}"] = self.v[k]
            out[f"{prefix}/step/{k}"] = np.array([float(self.steps[k])])
        return out

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray], prefix: str) -> "ParamStore":
        store = cls()
        head = f"{prefix}/param/"
        for key, val in arrays.items():
            if key.startswith(head):
                name = key[len(head):]
                store.add(name, val)
                store.m[name] = np.array(arrays[f"{prefix}/m/{name}"])
                store.v[name] = np.array(arrays[f"{prefix}/v/{name}"])
                store.steps[name] = int(arrays[f"{prefix}/step/{name}"][0])
        return store


def save_checkpoint(directory: str | Path, arrays: Mapping[str, np.ndarray], meta: dict) -> None:
    """Write ``manifest.txt`` (name, shape, byte offset) and ``blob.bin`` (<f8, row-major)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [CHECKPOINT_MAGIC, "meta " + json.dumps(meta, sort_keys=True)]
    offset = 0
    with open(directory / "blob.bin", "wb") as fh:
        for name, arr in arrays.items():
            if any(c.isspace() for c in name):
                raise ValueError(f"array name may not contain whitespace: {name!r}")
            a = np.ascontiguousarray(arr, dtype="<f8")
            fh.write(a.tobytes())
            shape = ",".join(str(s) for s in a.shape) or "-"
            lines.append(f"{name} {shape} {offset}")
            offset += a.nbytes
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_checkpoint(directory: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    lines = (directory / "manifest.txt").read_text().splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{directory}: not a checkpoint manifest")
    if not lines[1].startswith("meta "):
        raise ValueError(f"{directory}: manifest line 2 must hold metadata")
    meta = json.loads(lines[1][5:])
    blob = (directory / "blob.bin").read_bytes()
    arrays: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(lines[2:], start=3):
        try:
            name, shape_s, off_s = line.split(" ")
            shape = () if shape_s == "-" else tuple(int(s) for s in shape_s.split(","))
            off = int(off_s)
        except ValueError as exc:
            raise ValueError(f"{directory}/manifest.txt:{lineno}: malformed entry") from exc
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64)
    return arrays, meta
