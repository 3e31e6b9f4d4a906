"""Little-endian binary record helpers shared by the on-disk formats."""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

FORMAT_VERSION = 1


def write_magic(f: BinaryIO, magic: bytes) -> None:
    f.write(magic)


def read_magic(f: BinaryIO, magic: bytes, what: str) -> None:
    got = f.read(len(magic))
    if got != magic:
        raise ValueError(
            f"{what}: bad magic {got!r}, expected {magic!r} (wrong or corrupt file)"
        )


def write_u32(f: BinaryIO, *values: int) -> None:
    for v in values:
        if not 0 <= v < 2**32:
            raise ValueError(f"value {v} does not fit in u32")
        f.write(struct.pack("<I", v))


def read_u32(f: BinaryIO, count: int, what: str) -> tuple[int, ...]:
    raw = f.read(4 * count)
    if len(raw) != 4 * count:
        raise ValueError(f"{what}: truncated file (header)")
    return struct.unpack(f"<{count}I", raw)


def check_version(version: int, what: str) -> None:
    if version != FORMAT_VERSION:
        raise ValueError(f"{what}: unsupported format version {version}")


def write_f32(f: BinaryIO, arr: np.ndarray) -> None:
    f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_f32(f: BinaryIO, count: int, what: str) -> np.ndarray:
    raw = f.read(4 * count)
    if len(raw) != 4 * count:
        raise ValueError(f"{what}: truncated file (payload)")
    return np.frombuffer(raw, dtype="<f4").copy()


def write_u32_array(f: BinaryIO, arr: np.ndarray) -> None:
    a = np.asarray(arr)
    if a.min(initial=0) < 0 or a.max(initial=0) >= 2**32:
        raise ValueError("array value does not fit in u32")
    f.write(np.ascontiguousarray(a, dtype="<u4").tobytes())


def read_u32_array(f: BinaryIO, count: int, what: str) -> np.ndarray:
    raw = f.read(4 * count)
    if len(raw) != 4 * count:
        raise ValueError(f"{what}: truncated file (payload)")
    return np.frombuffer(raw, dtype="<u4").copy()


def expect_eof(f: BinaryIO, what: str) -> None:
    if f.read(1) != b"":
        raise ValueError(f"{what}: trailing bytes after payload")
