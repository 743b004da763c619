"""Samplers and transforms for every data distribution used in the suite.

The central object is the single-feature linearly separable family: a unit
direction v, margin epsilon, and Gaussian noise confined to the orthogonal
complement of v, with labels uniform on {-1, +1}.  On top of that live the
carrier-poisoning transform, the basis-flip transform, CIFAR-10 binary-batch
ingestion, and a synthetic CIFAR-shaped stand-in for machines without the
real files.

Samples are stored row-major as (n, K*d) with channel-major layout per row:
channel 0's d coordinates first, then channel 1, and so on.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import tensorio
from .rng import Rng

CIFAR_RECORD_BYTES = 3073
CIFAR_BATCH_RECORDS = 10000
CIFAR_BATCH_BYTES = CIFAR_RECORD_BYTES * CIFAR_BATCH_RECORDS
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILE = "test_batch.bin"


@dataclass(frozen=True)
class LinearSepSpec:
    """One instance of the separable family: (v, epsilon, sigma, n)."""

    v: np.ndarray
    epsilon: float
    sigma: float
    n: int
    seed: int | None = None

    def __post_init__(self):
        v = np.asarray(self.v, dtype=np.float64).ravel()
        norm = np.linalg.norm(v)
        if abs(norm - 1.0) > 1e-10:
            raise ValueError(f"direction must be unit norm, got {norm!r}")
        if self.epsilon < 0 or self.sigma < 0:
            raise ValueError("epsilon and sigma must be nonnegative")
        if self.n < 1:
            raise ValueError("sample count must be >= 1")
        object.__setattr__(self, "v", v)

    @property
    def dim(self) -> int:
        return self.v.size


@dataclass
class LabeledDataset:
    """Rows of samples with labels in {-1,+1} (binary) or {0..L-1}."""

    x: np.ndarray  # (n, K*d)
    y: np.ndarray  # (n,)
    channels: int = 1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y)
        if self.x.ndim != 2 or self.x.shape[0] != self.y.shape[0]:
            raise ValueError("x must be (n, D) with one label per row")
        if self.x.shape[1] % self.channels:
            raise ValueError("row length must be divisible by the channel count")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def channel_dim(self) -> int:
        return self.x.shape[1] // self.channels

    @property
    def label_set(self) -> list:
        return sorted(set(np.unique(self.y).tolist()))

    def per_channel(self) -> np.ndarray:
        return self.x.reshape(self.n, self.channels, self.channel_dim)

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.x[idx], self.y[idx], self.channels, dict(self.meta))

    def save(self, path) -> None:
        tensorio.write_tensor(
            path,
            self.x,
            extra={"kind": "dataset", "labels": self.y.tolist(), "channels": self.channels},
        )
        sidecar = {
            "label_set": self.label_set,
            "channels": self.channels,
            "meta": self.meta,
        }
        tensorio.atomic_write_text(
            str(path) + ".json", json.dumps(sidecar, sort_keys=True, default=str)
        )

    @classmethod
    def load(cls, path) -> "LabeledDataset":
        x, header = tensorio.read_tensor(path)
        if header.get("kind") != "dataset":
            raise ValueError(f"{path} is not a dataset container")
        return cls(x, np.asarray(header["labels"]), header["channels"])


@dataclass(frozen=True)
class Dipole:
    """Two-point classification problem {(x, +1), (x + v, -1)}."""

    x: np.ndarray
    v: np.ndarray

    @property
    def endpoints(self):
        return self.x, self.x + self.v


def make_dipole(x, v) -> Dipole:
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if not np.any(v):
        raise ValueError("dipole displacement must be nonzero")
    return Dipole(x, v)


def sample_linear(spec: LinearSepSpec, rng: Rng) -> LabeledDataset:
    """Draw n samples x = epsilon*y*v + w with w Gaussian orthogonal to v."""
    v = spec.v
    y = rng.signs(spec.n)
    g = rng.gaussian((spec.n, spec.dim), spec.sigma)
    w = g - np.outer(g @ v, v)
    x = spec.epsilon * y[:, None] * v[None, :] + w
    return LabeledDataset(
        x, y, channels=1, meta={"epsilon": spec.epsilon, "sigma": spec.sigma}
    )


def _direction_matrix(basis) -> np.ndarray:
    if hasattr(basis, "matrix"):
        return basis.matrix()
    return np.asarray(basis, dtype=np.float64)


def _class_indices(y: np.ndarray) -> np.ndarray:
    """Map labels to 0-based class ids: binary {-1,+1} -> {0,1}."""
    vals = np.unique(y)
    if set(vals.tolist()) <= {-1.0, 1.0}:
        return ((np.asarray(y) + 1) // 2).astype(int)
    return np.asarray(y).astype(int)


def carrier_slot(cls: int, carrier_index: int, channels: int) -> tuple:
    """(direction index, channel, sign) for the carrier of class ``cls``.

    Classes pair up two per direction/channel slot: pair p = cls // 2 uses
    channel p % K and direction index carrier_index + p // K; the two pair
    members are told apart by the sign of the planted projection.
    """
    pair = cls // 2
    return carrier_index + pair // channels, pair % channels, 2 * (cls % 2) - 1


def poison(
    ds: LabeledDataset, basis, carrier_index: int, epsilon: float
) -> LabeledDataset:
    """Replace each sample's projection on its class carrier with +-epsilon.

    The carrier of class y is the direction u_{i + p//K} on channel p % K
    with p = y // 2.  Only that one coordinate of the sample (in the carrier
    frame) changes; everything else is untouched.
    """
    u_matrix = _direction_matrix(basis)
    d = ds.channel_dim
    if u_matrix.shape[0] != d:
        raise ValueError(
            f"basis dimension {u_matrix.shape[0]} != per-channel input size {d}"
        )
    cls = _class_indices(ds.y)
    n_classes = int(cls.max()) + 1
    pairs = math.ceil(n_classes / 2)
    top_needed = carrier_index + (pairs - 1) // ds.channels
    if carrier_index < 0 or top_needed >= u_matrix.shape[1]:
        raise IndexError(
            f"carrier indices [{carrier_index}, {top_needed}] out of range for "
            f"{u_matrix.shape[1]} directions"
        )
    if pairs > ds.channels * (u_matrix.shape[1] - carrier_index):
        raise ValueError("channel/class capacity exceeded for this carrier start")

    x = ds.per_channel().copy()
    for c in range(n_classes):
        rows = np.flatnonzero(cls == c)
        if rows.size == 0:
            continue
        idx, channel, sign = carrier_slot(c, carrier_index, ds.channels)
        u = u_matrix[:, idx]
        block = x[rows, channel, :]
        proj = block @ u
        x[rows, channel, :] = block + (sign * epsilon - proj)[:, None] * u[None, :]
    out = LabeledDataset(
        x.reshape(ds.n, -1), ds.y.copy(), ds.channels, dict(ds.meta)
    )
    out.meta.update({"poison_carrier": carrier_index, "poison_epsilon": epsilon})
    return out


def carrier_projections(
    ds: LabeledDataset, basis, carrier_index: int
) -> np.ndarray:
    """(n, pairs) matrix of each sample's projection on every carrier slot."""
    u_matrix = _direction_matrix(basis)
    cls = _class_indices(ds.y)
    n_classes = int(cls.max()) + 1
    pairs = math.ceil(n_classes / 2)
    x = ds.per_channel()
    cols = []
    for p in range(pairs):
        idx, channel, _ = carrier_slot(2 * p, carrier_index, ds.channels)
        cols.append(x[:, channel, :] @ u_matrix[:, idx])
    return np.stack(cols, axis=1)


def carrier_only_accuracy(
    ds: LabeledDataset, basis, carrier_index: int, epsilon: float
) -> float:
    """Accuracy of the carrier-template decision rule on ds.

    Each class plants an exact +-epsilon value on its own carrier slot, so
    the rule picks the (slot, sign) whose template the sample matches most
    closely.  On a poisoned set the match is exact and accuracy is 1.0.
    """
    proj = carrier_projections(ds, basis, carrier_index)  # (n, pairs)
    cls = _class_indices(ds.y)
    n_classes = int(cls.max()) + 1
    dist = np.stack(
        [np.abs(proj - epsilon), np.abs(proj + epsilon)], axis=2
    )  # (n, pairs, sign) with sign 0 -> +, 1 -> -
    flat = dist.reshape(ds.n, -1)
    best = np.argmin(flat, axis=1)
    pair, signbit = best // 2, best % 2
    pred = 2 * pair + np.where(signbit == 0, 1, 0)
    pred = np.minimum(pred, n_classes - 1)
    return float(np.mean(pred == cls))


def flip_representation(u_matrix: np.ndarray, ds: LabeledDataset) -> LabeledDataset:
    """x' = U flip(U^T x), applied per channel; an isometry of input space."""
    u_matrix = _direction_matrix(u_matrix)
    d = ds.channel_dim
    if u_matrix.shape != (d, d):
        raise ValueError(f"flip needs a square ({d}, {d}) matrix, got {u_matrix.shape}")
    residual = np.abs(u_matrix.T @ u_matrix - np.eye(d)).max()
    if residual > 1e-8:
        raise ValueError(f"matrix is not orthonormal (residual {residual:.2e})")
    x = ds.per_channel()
    coeffs = np.einsum("ncd,de->nce", x, u_matrix)
    flipped = coeffs[:, :, ::-1]
    x_new = np.einsum("nce,de->ncd", flipped, u_matrix)
    out = LabeledDataset(x_new.reshape(ds.n, -1), ds.y.copy(), ds.channels, dict(ds.meta))
    out.meta["flipped"] = not ds.meta.get("flipped", False)
    return out


class Cifar10(NamedTuple):
    train: LabeledDataset
    test: LabeledDataset


def _read_cifar_batch(path) -> tuple:
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing CIFAR-10 batch file: {path}")
    size = os.path.getsize(path)
    if size != CIFAR_BATCH_BYTES:
        raise ValueError(
            f"{path}: expected {CIFAR_BATCH_BYTES} bytes "
            f"({CIFAR_BATCH_RECORDS} records of {CIFAR_RECORD_BYTES}), found {size}"
        )
    raw = np.fromfile(path, dtype=np.uint8).reshape(
        CIFAR_BATCH_RECORDS, CIFAR_RECORD_BYTES
    )
    labels = raw[:, 0].astype(np.int64)
    pixels = raw[:, 1:].astype(np.float64) / 255.0  # channel-major: R, G, B planes
    return pixels, labels


def load_cifar10(path) -> Cifar10:
    """Read the standard binary batches; pixels scaled to [0, 1], K = 3."""
    base = path
    candidate = os.path.join(path, "cifar-10-batches-bin")
    if os.path.isdir(candidate):
        base = candidate
    xs, ys = [], []
    for name in CIFAR_TRAIN_FILES:
        x, y = _read_cifar_batch(os.path.join(base, name))
        xs.append(x)
        ys.append(y)
    train = LabeledDataset(np.concatenate(xs), np.concatenate(ys), channels=3)
    x, y = _read_cifar_batch(os.path.join(base, CIFAR_TEST_FILE))
    test = LabeledDataset(x, y, channels=3)
    return Cifar10(train, test)


def synthetic_cifar_like(
    n_train: int,
    n_test: int,
    rng: Rng,
    classes: int = 10,
    height: int = 32,
    width: int = 32,
    channels: int = 3,
    low_freq_cutoff: int = 4,
    signal: float = 0.35,
    noise: float = 0.25,
) -> Cifar10:
    """CIFAR-shaped stand-in: smooth class prototypes plus pixel noise.

    Prototypes live on low spatial frequencies, mimicking where natural-image
    class information sits; per-sample Gaussian pixel noise is added and
    values are clipped to [0, 1].  Deterministic given the rng.
    """
    d = height * width
    proto = np.zeros((classes, channels, d))
    freq_rows = []
    for k1 in range(height):
        for k2 in range(width):
            f1 = min(k1, height - k1)
            f2 = min(k2, width - k2)
            if 0 < max(f1, f2) <= low_freq_cutoff:
                freq_rows.append((k1, k2))
    for c in range(classes):
        for ch in range(channels):
            spec2d = np.zeros((height, width), dtype=np.complex128)
            coeffs = rng.gaussian((len(freq_rows), 2))
            for (k1, k2), (re, im) in zip(freq_rows, coeffs):
                spec2d[k1, k2] += re + 1j * im
                spec2d[(-k1) % height, (-k2) % width] += re - 1j * im
            img = np.fft.ifft2(spec2d, norm="ortho").real
            img /= np.linalg.norm(img) + 1e-12
            proto[c, ch] = img.ravel() * math.sqrt(d)

    def draw(n):
        y = rng.integers(0, classes, size=n)
        x = 0.5 + signal * proto[y].reshape(n, channels * d)
        x += rng.gaussian((n, channels * d), noise)
        np.clip(x, 0.0, 1.0, out=x)
        return LabeledDataset(x, y.astype(np.int64), channels=channels)

    return Cifar10(draw(n_train), draw(n_test))
