"""Binary tensor container (".vten") and the named-tensor checkpoint table.

.vten layout, all little-endian:
    magic "VTEN" | u32 version=1 | u8 dtype (0=f32, 1=f64) | u8 ndim |
    2 pad bytes | ndim x u32 extents | row-major values

Checkpoint layout:
    magic "SWCK" | u32 count | count x (u16 name length, UTF-8 name, .vten record)
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError, NumericError

MAGIC = b"VTEN"
VERSION = 1
CKPT_MAGIC = b"SWCK"

_CODE_TO_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_TO_CODE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}

_HEADER = struct.Struct("<4sIBBxx")


def dumps(arr: np.ndarray) -> bytes:
    """Serialize one array. Only float32/float64, finite values."""
    arr = np.asarray(arr)
    code = _DTYPE_TO_CODE.get(arr.dtype)
    if code is None:
        raise FormatError(f"unsupported dtype {arr.dtype}; .vten stores f32 or f64")
    if arr.ndim > 255:
        raise FormatError(f"ndim {arr.ndim} exceeds container limit")
    if not np.all(np.isfinite(arr)):
        raise NumericError("refusing to serialize non-finite tensor")
    head = _HEADER.pack(MAGIC, VERSION, code, arr.ndim)
    extents = struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=_CODE_TO_DTYPE[code]).tobytes()
    return head + extents + payload


def _loads_at(buf: bytes, offset: int, source: str) -> tuple[np.ndarray, int]:
    """Decode one tensor record starting at offset; returns (array, next offset)."""
    end = offset + _HEADER.size
    if end > len(buf):
        raise FormatError(f"{source}: truncated header")
    magic, version, code, ndim = _HEADER.unpack_from(buf, offset)
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{source}: unsupported version {version}")
    dtype = _CODE_TO_DTYPE.get(code)
    if dtype is None:
        raise FormatError(f"{source}: unknown dtype code {code}")
    if end + 4 * ndim > len(buf):
        raise FormatError(f"{source}: truncated extents")
    shape = struct.unpack_from(f"<{ndim}I", buf, end)
    end += 4 * ndim
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    nbytes = count * dtype.itemsize
    if end + nbytes > len(buf):
        raise FormatError(f"{source}: payload shorter than extents imply")
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=end).reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"{source}: tensor contains non-finite values")
    return arr.copy(), end + nbytes


def loads(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    arr, end = _loads_at(buf, 0, source)
    if end != len(buf):
        raise FormatError(f"{source}: {len(buf) - end} trailing bytes after tensor")
    return arr


def write(path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(arr))


def read(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    return loads(buf, source=str(path))


def write_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    """Write a named-tensor table; iteration order is preserved on read."""
    parts = [CKPT_MAGIC, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise FormatError(f"tensor name too long: {name[:32]}...")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(dumps(arr))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_checkpoint(path) -> dict[str, np.ndarray]:
    source = str(path)
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != CKPT_MAGIC:
        raise FormatError(f"{source}: bad magic {buf[:4]!r}, expected {CKPT_MAGIC!r}")
    (count,) = struct.unpack_from("<I", buf, 4)
    offset = 8
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        if offset + 2 > len(buf):
            raise FormatError(f"{source}: truncated record header")
        (nlen,) = struct.unpack_from("<H", buf, offset)
        offset += 2
        name = buf[offset : offset + nlen].decode("utf-8")
        offset += nlen
        if name in out:
            raise FormatError(f"{source}: duplicate tensor name {name!r}")
        out[name], offset = _loads_at(buf, offset, source)
    if offset != len(buf):
        raise FormatError(f"{source}: trailing bytes after last record")
    return out
