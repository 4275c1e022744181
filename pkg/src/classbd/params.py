"""Named parameter registry and the binary checkpoint format.

Checkpoint layout (all little-endian)::

    b"CLASSBD1"                magic, 8 bytes
    uint64                     header length in bytes
    header                     UTF-8 JSON: {"tensors": [{name, shape, offset}], "meta": {...}}
    payload                    float64 values; ``offset`` counts bytes from payload start
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .autograd import Tensor
from .signals import ValidationError

MAGIC = b"CLASSBD1"


class ParameterStore:
    """Ordered, uniquely named collection of trainable tensors."""

    def __init__(self, params: Mapping[str, Tensor] | None = None):
        self._params: dict[str, Tensor] = {}
        for name, p in (params or {}).items():
            self.add(name, p)

    def add(self, name: str, p: Tensor) -> Tensor:
        if name in self._params:
            raise ValidationError(f"duplicate parameter name {name!r}")
        if p.is_complex:
            raise ValidationError("parameters are stored as real arrays")
        p.name = name
        p.requires_grad = True
        p.zero_grad()
        self._params[name] = p
        return p

    def update(self, other: "ParameterStore | Mapping[str, Tensor]") -> None:
        items = other.items() if isinstance(other, Mapping) else other._params.items()
        for name, p in items:
            self.add(name, p)

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def grad(self, name: str) -> np.ndarray:
        return self._params[name].grad

    def num_values(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self._params.items()}

    def load_state(self, state: Mapping[str, np.ndarray], strict: bool = True) -> None:
        for name, p in self._params.items():
            if name not in state:
                if strict:
                    raise ValidationError(f"checkpoint lacks parameter {name!r}")
                continue
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValidationError(f"shape mismatch for {name!r}: {arr.shape} vs {p.data.shape}")
            p.data[...] = arr


def save_checkpoint(path, tensors: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    entries, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        a = np.asarray(arr, dtype="<f8", order="C")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.nbytes
    header = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for c in chunks:
            fh.write(c)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValidationError(f"{path} is not a ClassBD checkpoint")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + hlen].decode())
    payload = memoryview(raw)[16 + hlen :]
    out = {}
    for e in header["tensors"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=e["offset"])
        out[e["name"]] = arr.reshape(e["shape"]).astype(np.float64)
    return out, header.get("meta", {})
