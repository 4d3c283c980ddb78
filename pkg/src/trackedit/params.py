"""Named parameter collections with seeded init and binary checkpoints.

Checkpoint format: a flat little-endian tensor archive `<stem>.bin` plus a
JSON manifest `<stem>.json` listing {name, shape, dtype, byte offset} per
tensor, written in name order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .autograd import Tensor, param
from .errors import SchemaViolation


class ParamStore:
    """Ordered name -> Tensor mapping for trainable parameters."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name '{name}'")
        t = param(data)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self):
        return list(self._params.keys())

    def tensors(self):
        return list(self._params.values())

    def items(self):
        return list(self._params.items())

    def n_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore()
        for name, t in self._params.items():
            out.add(name, t.data.astype(dtype))
        return out

    def state(self) -> dict:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state(self, state: dict) -> None:
        for name, t in self._params.items():
            if name not in state:
                raise SchemaViolation(f"checkpoint missing parameter '{name}'")
            arr = np.asarray(state[name])
            if arr.shape != t.data.shape:
                raise SchemaViolation(
                    f"checkpoint parameter '{name}' has shape {arr.shape}, expected {t.data.shape}"
                )
            t.data = arr.astype(t.data.dtype)


def uniform_init(rng: np.random.Generator, shape, dtype=np.float64) -> np.ndarray:
    """Uniform in +-1/sqrt(fan_in); fan_in is the first axis of 2-D weights."""
    fan_in = shape[0] if len(shape) > 1 else shape[0]
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def save_checkpoint(stem, stores: dict) -> None:
    """Write one or more ParamStores under a path stem.

    `stores` maps a group name (e.g. "conditioner") to a ParamStore; tensor
    names in the manifest are "<group>.<param>".
    """
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    manifest = []
    offset = 0
    blobs = []
    for group, store in stores.items():
        for name, t in store.items():
            blob = np.ascontiguousarray(t.data).tobytes()
            manifest.append(
                {
                    "name": f"{group}.{name}",
                    "shape": list(t.data.shape),
                    "dtype": str(t.data.dtype),
                    "offset": offset,
                }
            )
            blobs.append(blob)
            offset += len(blob)
    stem.with_suffix(".bin").write_bytes(b"".join(blobs))
    stem.with_suffix(".json").write_text(json.dumps(manifest, indent=1) + "\n")


def load_checkpoint(stem) -> dict:
    """Read a checkpoint back as {group: {param_name: array}}."""
    stem = Path(stem)
    manifest_path = stem.with_suffix(".json")
    bin_path = stem.with_suffix(".bin")
    if not manifest_path.exists() or not bin_path.exists():
        raise SchemaViolation(f"checkpoint '{stem}' is missing its .json or .bin file")
    manifest = json.loads(manifest_path.read_text())
    raw = bin_path.read_bytes()
    groups: dict = {}
    for entry in manifest:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=start).reshape(shape)
        group, name = entry["name"].split(".", 1)
        groups.setdefault(group, {})[name] = arr.copy()
    return groups
