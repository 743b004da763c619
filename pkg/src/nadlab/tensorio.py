"""On-disk tensor container.

A file holds one UTF-8 JSON header line (terminated by ``\\n``) followed by
the raw little-endian float64 values in row-major order.  The header always
carries ``shape``, ``dtype``, ``layout`` and ``version``; callers may attach
extra metadata keys (index maps, provenance, parameter layouts).

Writes are atomic: data goes to a temp file in the target directory which is
then renamed over the destination.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

FORMAT_VERSION = 1


def write_tensor(path, array: np.ndarray, extra: dict | None = None) -> None:
    array = np.asarray(array, dtype=np.float64)
    header = {
        "shape": list(array.shape),
        "dtype": "float64",
        "layout": "row-major",
        "version": FORMAT_VERSION,
    }
    if extra:
        overlap = set(extra) & set(header)
        if overlap:
            raise ValueError(f"extra metadata may not override {sorted(overlap)}")
        header.update(extra)
    payload = json.dumps(header, sort_keys=True).encode() + b"\n"
    payload += np.ascontiguousarray(array, dtype="<f8").tobytes()
    atomic_write_bytes(path, payload)


def read_tensor(path) -> tuple[np.ndarray, dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl].decode())
    if header.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported container version {header.get('version')!r}")
    shape = tuple(header["shape"])
    count = int(np.prod(shape)) if shape else 1
    body = raw[nl + 1 :]
    expected = count * 8
    if len(body) != expected:
        raise ValueError(
            f"{path}: expected {expected} payload bytes, found {len(body)}"
        )
    array = np.frombuffer(body, dtype="<f8", count=count).reshape(shape).copy()
    return array, header


def atomic_write_bytes(path, payload: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


def is_finite(array: np.ndarray) -> bool:
    """Validity check: a tensor with NaN/Inf violates the value contract."""
    return bool(np.all(np.isfinite(array)))
