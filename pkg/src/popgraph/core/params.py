"""Named parameter storage, initialisers and the checkpoint container."""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Iterator

import numpy as np

from popgraph.core.tensor import Tensor

CHECKPOINT_MAGIC = b"POPGRAPH-CKPT\x00"
CHECKPOINT_FORMAT = "popgraph.checkpoint/1"


class ParamStore:
    """Ordered mapping from dotted names to trainable tensors."""

    def __init__(self):
        self._entries: OrderedDict[str, Tensor] = OrderedDict()

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._entries:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self._entries[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._entries[name]
        except KeyError:
            raise KeyError(f"no parameter named {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def names(self) -> list[str]:
        return list(self._entries)

    def zero_grad(self) -> None:
        for t in self._entries.values():
            t.grad = None

    def num_parameters(self) -> int:
        return int(sum(t.data.size for t in self._entries.values()))

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._entries.items()}

    def load_snapshot(self, values: dict[str, np.ndarray], strict: bool = True) -> None:
        for name, arr in values.items():
            if name not in self._entries:
                if strict:
                    raise KeyError(f"snapshot has unknown parameter {name!r}")
                continue
            cur = self._entries[name]
            if cur.shape != arr.shape:
                raise ValueError(f"shape mismatch for {name!r}: {cur.shape} vs {arr.shape}")
            cur.data = np.array(arr, dtype=np.float64)


class Initializer:
    """Seeded parameter initialisation with the conventional schemes."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def linear(self, fan_in: int, fan_out: int) -> np.ndarray:
        bound = 1.0 / np.sqrt(fan_in)
        return self.rng.uniform(-bound, bound, size=(fan_in, fan_out))

    def embedding(self, rows: int, width: int) -> np.ndarray:
        return self.rng.normal(0.0, 0.02, size=(rows, width))

    @staticmethod
    def zeros(*shape: int) -> np.ndarray:
        return np.zeros(shape)

    @staticmethod
    def ones(*shape: int) -> np.ndarray:
        return np.ones(shape)


def save_checkpoint(path: str | Path, params: ParamStore | dict[str, np.ndarray], meta: dict) -> None:
    """Write parameters and metadata to a single binary file.

    Layout: magic, u64 header length, UTF-8 JSON header, then the raw
    little-endian float64 payload of each entry in header order. Entries
    are sorted by name so the bytes do not depend on insertion order.
    """
    arrays = params.snapshot() if isinstance(params, ParamStore) else params
    arrays = {k: arrays[k] for k in sorted(arrays)}
    entries = []
    offset = 0
    for name, arr in arrays.items():
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    header = {"format": CHECKPOINT_FORMAT, "meta": meta, "entries": entries}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    pos = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack("<Q", raw[pos : pos + 8])
    pos += 8
    header = json.loads(raw[pos : pos + hlen].decode("utf-8"))
    pos += hlen
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: unsupported checkpoint format {header.get('format')!r}")
    arrays: dict[str, np.ndarray] = {}
    for e in header["entries"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        start = pos + e["offset"]
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=start).reshape(e["shape"])
        arrays[e["name"]] = arr.astype(np.float64)
    return arrays, header["meta"]
