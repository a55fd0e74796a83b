"""Byte-level checks of the feature-store writer."""

import struct

import numpy as np
import pytest

from featx.hcvf import empty_store, write_store


def test_empty_store_is_header_only(tmp_path):
    p = tmp_path / "empty.hcvf"
    empty_store(p, dim=4096)
    raw = p.read_bytes()
    assert len(raw) == 16
    assert raw[:4] == b"HCVF"
    version, count, dim = struct.unpack_from("<III", raw, 4)
    assert (version, count, dim) == (1, 0, 4096)


def test_single_row_byte_accounting(tmp_path):
    p = tmp_path / "one.hcvf"
    write_store(p, ["abc"], np.zeros((1, 4), dtype=np.float32))
    assert p.stat().st_size == 16 + (2 + 3) + 4 * 4


def test_layout_decodes(tmp_path):
    p = tmp_path / "two.hcvf"
    values = np.array([[1.5, -2.0], [0.25, 8.0]], dtype=np.float32)
    write_store(p, ["first", "second"], values)
    raw = p.read_bytes()
    version, count, dim = struct.unpack_from("<III", raw, 4)
    assert (version, count, dim) == (1, 2, 2)
    offset = 16
    ids = []
    for _ in range(count):
        (n,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        ids.append(raw[offset : offset + n].decode("utf-8"))
        offset += n
    assert ids == ["first", "second"]
    decoded = np.frombuffer(raw, dtype="<f4", offset=offset).reshape(2, 2)
    np.testing.assert_array_equal(decoded, values)
    assert offset + 16 == len(raw)


def test_duplicate_ids_rejected(tmp_path):
    with pytest.raises(ValueError, match="duplicate"):
        write_store(tmp_path / "x.hcvf", ["a", "a"], np.zeros((2, 3), dtype=np.float32))


def test_id_count_mismatch_rejected(tmp_path):
    with pytest.raises(ValueError, match="ids"):
        write_store(tmp_path / "x.hcvf", ["a"], np.zeros((2, 3), dtype=np.float32))


def test_non_finite_rejected(tmp_path):
    bad = np.array([[np.nan, 1.0]], dtype=np.float32)
    with pytest.raises(ValueError, match="finite"):
        write_store(tmp_path / "x.hcvf", ["a"], bad)


def test_overlong_id_rejected(tmp_path):
    with pytest.raises(ValueError, match="too long"):
        write_store(tmp_path / "x.hcvf", ["x" * 70000], np.zeros((1, 2), dtype=np.float32))


def test_one_dimensional_values_rejected(tmp_path):
    with pytest.raises(ValueError, match="2-d"):
        write_store(tmp_path / "x.hcvf", ["a"], np.zeros(4, dtype=np.float32))


def test_no_temp_file_left_behind(tmp_path):
    p = tmp_path / "clean.hcvf"
    write_store(p, ["a"], np.ones((1, 2), dtype=np.float32))
    assert [f.name for f in tmp_path.iterdir()] == ["clean.hcvf"]
