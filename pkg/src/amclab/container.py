"""Binary container for named float64 tensors plus a JSON header.

Layout: magic "AMCM", format version (u16 LE), header length (u32 LE),
canonical JSON header, then for each tensor: name length (u32), name bytes,
rank (u32), extents (u32 each), payload as little-endian float64.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"AMCM"
VERSION = 1


class ContainerError(ValueError):
    """Raised on corrupt or truncated container files; carries the offset."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def write(path, header: dict, tensors: dict[str, np.ndarray]) -> None:
    hdr = canonical_json(header)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<H", VERSION))
        f.write(struct.pack("<I", len(hdr)))
        f.write(hdr)
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            nb = name.encode()
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            for ext in arr.shape:
                f.write(struct.pack("<I", ext))
            f.write(arr.astype("<f8").tobytes())


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.blob):
            raise ContainerError(f"truncated while reading {what}", self.pos)
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u16(self, what):
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def read(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        blob = f.read()
    r = _Reader(blob)
    if r.take(4, "magic") != MAGIC:
        raise ContainerError("bad magic bytes", 0)
    version = r.u16("version")
    if version != VERSION:
        raise ContainerError(f"unsupported format version {version}", 4)
    hdr_len = r.u32("header length")
    try:
        header = json.loads(r.take(hdr_len, "header"))
    except json.JSONDecodeError as e:
        raise ContainerError(f"invalid header JSON: {e}", r.pos - hdr_len) from e
    tensors = {}
    count = r.u32("tensor count")
    for _ in range(count):
        name = r.take(r.u32("name length"), "tensor name").decode()
        rank = r.u32("rank")
        shape = tuple(r.u32("extent") for _ in range(rank))
        n = int(np.prod(shape)) if shape else 1
        payload = r.take(8 * n, f"payload of '{name}'")
        tensors[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    if r.pos != len(blob):
        raise ContainerError("trailing bytes after last tensor", r.pos)
    return header, tensors
