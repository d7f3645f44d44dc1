import struct

import numpy as np
import pytest

from beamlearn.tensorfile import read_tensor, write_tensor


@pytest.mark.parametrize("array", [
    np.arange(12.0).reshape(3, 4),
    np.array(3.5),
    np.zeros((0, 5)),
    np.random.default_rng(0).normal(size=(2, 3, 4)),
])
def test_real_roundtrip(tmp_path, array):
    path = tmp_path / "t.btf"
    write_tensor(path, array)
    back = read_tensor(path)
    assert back.dtype == np.float64
    np.testing.assert_array_equal(back, array)


def test_complex_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    array = rng.normal(size=(4, 2)) + 1j * rng.normal(size=(4, 2))
    path = tmp_path / "c.btf"
    write_tensor(path, array)
    back = read_tensor(path)
    assert back.dtype == np.complex128
    np.testing.assert_array_equal(back, array)


def test_header_layout(tmp_path):
    path = tmp_path / "h.btf"
    write_tensor(path, np.ones((2, 3)))
    blob = path.read_bytes()
    assert blob[:4] == b"BTF1"
    code, ndim = struct.unpack("<BB", blob[4:6])
    assert (code, ndim) == (1, 2)
    assert struct.unpack("<2Q", blob[6:22]) == (2, 3)
    assert len(blob) == 22 + 6 * 8 + 4


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.btf"
    path.write_bytes(b"NOPE" + b"\x00" * 20)
    with pytest.raises(ValueError, match="not a BTF1"):
        read_tensor(path)


def test_crc_detects_corruption(tmp_path):
    path = tmp_path / "x.btf"
    write_tensor(path, np.arange(6.0))
    blob = bytearray(path.read_bytes())
    blob[10] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(ValueError, match="CRC"):
        read_tensor(path)


def test_truncated_payload_rejected(tmp_path):
    import zlib

    head = b"BTF1" + struct.pack("<BB", 1, 1) + struct.pack("<Q", 4)
    payload = b"\x00" * 16  # only 2 of 4 float64 values
    blob = head + payload
    blob += struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)
    path = tmp_path / "trunc.btf"
    path.write_bytes(blob)
    with pytest.raises(ValueError, match="payload"):
        read_tensor(path)


def test_unknown_dtype_code_rejected(tmp_path):
    import zlib

    head = b"BTF1" + struct.pack("<BB", 9, 1) + struct.pack("<Q", 1)
    blob = head + b"\x00" * 8
    blob += struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)
    path = tmp_path / "odd.btf"
    path.write_bytes(blob)
    with pytest.raises(ValueError, match="dtype"):
        read_tensor(path)
