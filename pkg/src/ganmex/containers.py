"""Self-describing binary containers shared by the checkpoint formats.

Layout: ascii magic (7 bytes, trailing digit is the format version), a
length-prefixed JSON header, then named raw arrays. All integers are
little-endian; float arrays are raw little-endian 64-bit.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np


class ContainerError(ValueError):
    """Malformed container file; the message names the offending field."""


_DTYPES = {"f8": "<f8", "i8": "<i8", "u1": "u1"}


def _dtype_code(arr: np.ndarray) -> str:
    for code, dt in _DTYPES.items():
        if arr.dtype == np.dtype(dt):
            return code
    raise ValueError(f"unsupported array dtype {arr.dtype}")


def atomic_write(path: str, payload: bytes) -> None:
    """Write via temp file + rename so readers never see partial files."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def pack(magic: bytes, header: dict, arrays: dict[str, np.ndarray]) -> bytes:
    if len(magic) != 7:
        raise ValueError("magic must be 7 bytes")
    parts = [magic]
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(header_bytes)))
    parts.append(header_bytes)
    parts.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        name_b = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_b)))
        parts.append(name_b)
        code = _dtype_code(arr)
        parts.append(code.encode("ascii"))
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, payload: bytes):
        self.buf = payload
        self.off = 0

    def take(self, n: int, field: str) -> bytes:
        if self.off + n > len(self.buf):
            raise ContainerError(
                f"truncated file while reading {field} at byte {self.off}"
            )
        chunk = self.buf[self.off : self.off + n]
        self.off += n
        return chunk

    def u8(self, field: str) -> int:
        return struct.unpack("<B", self.take(1, field))[0]

    def u16(self, field: str) -> int:
        return struct.unpack("<H", self.take(2, field))[0]

    def u32(self, field: str) -> int:
        return struct.unpack("<I", self.take(4, field))[0]


def unpack(payload: bytes, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    r = _Reader(payload)
    got = r.take(7, "magic")
    if got != magic:
        if got[:6] == magic[:6]:
            raise ContainerError(
                f"checkpoint version {got.decode('ascii', 'replace')} is not "
                f"supported; expected {magic.decode('ascii')}"
            )
        raise ContainerError(
            f"bad magic {got!r}; expected {magic.decode('ascii')}"
        )
    header_len = r.u32("header length")
    try:
        header = json.loads(r.take(header_len, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"malformed JSON header: {exc}") from None
    arrays: dict[str, np.ndarray] = {}
    count = r.u32("array count")
    for i in range(count):
        name = r.take(r.u16(f"array {i} name length"), f"array {i} name").decode("utf-8")
        code = r.take(2, f"array {name} dtype").decode("ascii")
        if code not in _DTYPES:
            raise ContainerError(f"array {name}: unknown dtype code {code!r}")
        ndim = r.u8(f"array {name} ndim")
        shape = tuple(r.u32(f"array {name} shape[{d}]") for d in range(ndim))
        dt = np.dtype(_DTYPES[code])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        data = np.frombuffer(r.take(nbytes, f"array {name} data"), dtype=dt)
        arrays[name] = data.reshape(shape).copy()
    if r.off != len(payload):
        raise ContainerError(f"{len(payload) - r.off} trailing bytes after arrays")
    return header, arrays


def write_file(path: str, magic: bytes, header: dict, arrays: dict[str, np.ndarray]) -> None:
    atomic_write(path, pack(magic, header, arrays))


def read_file(path: str, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        return unpack(fh.read(), magic)
