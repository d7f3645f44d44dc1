"""BTF1 binary tensor files.

Layout: magic "BTF1" | dtype code u8 (1 = real64, 2 = complex128 interleaved)
| ndim u8 | dims as u64 little-endian | row-major payload | CRC32 (u32 LE)
over everything before it.
"""

from __future__ import annotations

import pathlib
import struct
import zlib

import numpy as np

MAGIC = b"BTF1"
DTYPE_REAL = 1
DTYPE_COMPLEX = 2


def write_tensor(path, array):
    array = np.asarray(array)
    if np.iscomplexobj(array):
        code = DTYPE_COMPLEX
        payload = np.ascontiguousarray(array, dtype="<c16").tobytes()
    else:
        code = DTYPE_REAL
        payload = np.ascontiguousarray(array, dtype="<f8").tobytes()
    head = MAGIC + struct.pack("<BB", code, array.ndim)
    head += struct.pack(f"<{array.ndim}Q", *array.shape)
    blob = head + payload
    blob += struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(blob)


def read_tensor(path):
    blob = pathlib.Path(path).read_bytes()
    if len(blob) < 10 or blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a BTF1 tensor file")
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != crc:
        raise ValueError(f"{path}: CRC mismatch, file corrupted")
    code, ndim = struct.unpack("<BB", blob[4:6])
    dims = struct.unpack(f"<{ndim}Q", blob[6:6 + 8 * ndim])
    payload = blob[6 + 8 * ndim:-4]
    count = int(np.prod(dims)) if ndim else 1
    if code == DTYPE_REAL:
        expected = 8 * count
        dtype = "<f8"
    elif code == DTYPE_COMPLEX:
        expected = 16 * count
        dtype = "<c16"
    else:
        raise ValueError(f"{path}: unknown dtype code {code}")
    if len(payload) != expected:
        raise ValueError(
            f"{path}: payload length {len(payload)} != expected {expected}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
