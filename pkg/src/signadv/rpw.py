"""RPW1 tensor container.

Layout, all integers little-endian unsigned 32-bit:

    magic "RPW1"
    arch_id byte length, arch_id UTF-8 bytes
    class_count
    input_side
    tensors until EOF, each: rank, dims..., raw little-endian float32 data

Round trips are bit-exact. Used for classifier weights and exported
perturbation fields.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import WeightFormatError

MAGIC = b"RPW1"
_U32 = struct.Struct("<I")
_MAX_RANK = 8


def write_rpw(
    path: "str | Path",
    arch_id: str,
    class_count: int,
    input_side: int,
    tensors: Sequence[np.ndarray],
) -> None:
    raw = bytearray()
    raw += MAGIC
    ident = arch_id.encode("utf-8")
    raw += _U32.pack(len(ident))
    raw += ident
    raw += _U32.pack(class_count)
    raw += _U32.pack(input_side)
    for t in tensors:
        arr = np.ascontiguousarray(t, dtype=np.float32)
        raw += _U32.pack(arr.ndim)
        for d in arr.shape:
            raw += _U32.pack(d)
        raw += arr.astype("<f4", copy=False).tobytes()
    Path(path).write_bytes(bytes(raw))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise WeightFormatError(f"file truncated while reading {what}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]

    @property
    def exhausted(self) -> bool:
        return self.pos >= len(self.data)


def read_rpw(
    path: "str | Path", tensor_names: "Sequence[str] | None" = None
) -> tuple[str, int, int, list[np.ndarray]]:
    """Read a container; `tensor_names` improves truncation error messages."""
    data = Path(path).read_bytes()
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise WeightFormatError(f"bad magic in {path}: expected {MAGIC!r}")
    ident_len = r.u32("arch_id length")
    arch_id = r.take(ident_len, "arch_id").decode("utf-8")
    class_count = r.u32("class_count")
    input_side = r.u32("input_side")
    tensors: list[np.ndarray] = []
    while not r.exhausted:
        idx = len(tensors)
        name = tensor_names[idx] if tensor_names and idx < len(tensor_names) else f"tensor {idx}"
        rank = r.u32(f"{name} rank")
        if rank > _MAX_RANK:
            raise WeightFormatError(f"{name} has implausible rank {rank}")
        dims = [r.u32(f"{name} dim {i}") for i in range(rank)]
        count = 1
        for d in dims:
            count *= d
        blob = r.take(4 * count, name)
        arr = np.frombuffer(blob, dtype="<f4").reshape(dims).astype(np.float32)
        tensors.append(arr)
    return arch_id, class_count, input_side, tensors
