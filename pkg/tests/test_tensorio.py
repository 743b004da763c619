import json
import os

import numpy as np
import pytest

from nadlab import tensorio
from nadlab.rng import Rng


def test_roundtrip(tmp_path):
    arr = Rng(0).gaussian((3, 4, 5))
    path = tmp_path / "a.nt"
    tensorio.write_tensor(path, arr, extra={"kind": "test"})
    back, header = tensorio.read_tensor(path)
    assert np.array_equal(arr, back)
    assert header["shape"] == [3, 4, 5]
    assert header["dtype"] == "float64"
    assert header["layout"] == "row-major"
    assert header["kind"] == "test"


def test_header_is_single_json_line(tmp_path):
    path = tmp_path / "a.nt"
    tensorio.write_tensor(path, np.ones(2))
    raw = path.read_bytes()
    line = raw[: raw.index(b"\n")]
    assert json.loads(line)["version"] == 1


def test_truncated_payload_reports_expected_bytes(tmp_path):
    path = tmp_path / "a.nt"
    tensorio.write_tensor(path, np.ones(10))
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="expected 80 payload bytes"):
        tensorio.read_tensor(path)


def test_extra_may_not_shadow_core_fields(tmp_path):
    with pytest.raises(ValueError):
        tensorio.write_tensor(tmp_path / "a.nt", np.ones(1), extra={"shape": [9]})


def test_atomic_write_leaves_no_temp_files(tmp_path):
    path = tmp_path / "sub" / "a.nt"
    tensorio.write_tensor(path, np.ones(4))
    names = os.listdir(tmp_path / "sub")
    assert names == ["a.nt"]


def test_rewrite_is_byte_identical(tmp_path):
    arr = Rng(1).gaussian((16,))
    p1, p2 = tmp_path / "a.nt", tmp_path / "b.nt"
    tensorio.write_tensor(p1, arr, extra={"k": 1})
    tensorio.write_tensor(p2, arr, extra={"k": 1})
    assert p1.read_bytes() == p2.read_bytes()


def test_is_finite():
    assert tensorio.is_finite(np.ones(3))
    assert not tensorio.is_finite(np.array([1.0, np.nan]))
    assert not tensorio.is_finite(np.array([np.inf]))
