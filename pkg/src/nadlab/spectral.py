"""Real orthonormal 2D Fourier direction basis and spectrum display helpers.

The DFT here is unitary (norm="ortho"), so Parseval holds exactly and
energy comparisons need no normalization bookkeeping.  The real basis pairs
each frequency with its conjugate partner; self-conjugate bins (DC, and the
Nyquist rows/columns of even extents) contribute a single real vector and no
imaginary one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorio


def dft2(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError(f"dft2 expects a 2-D array, got ndim={x.ndim}")
    if np.iscomplexobj(x):
        raise ValueError("dft2 expects a real input")
    return np.fft.fft2(x.astype(np.float64), norm="ortho")


def idft2(spectrum: np.ndarray) -> np.ndarray:
    spectrum = np.asarray(spectrum)
    if spectrum.ndim != 2:
        raise ValueError(f"idft2 expects a 2-D array, got ndim={spectrum.ndim}")
    return np.fft.ifft2(spectrum, norm="ortho").real


def _conj_index(k1: int, k2: int, h: int, w: int) -> tuple:
    return ((-k1) % h, (-k2) % w)


def is_self_conjugate(k1: int, k2: int, h: int, w: int) -> bool:
    return _conj_index(k1, k2, h, w) == (k1, k2)


@dataclass(frozen=True)
class FourierBasis:
    """Complete orthonormal basis of R^(H*W), sparse in the Fourier domain.

    ``vectors[i]`` is an HxW unit image; ``index[i]`` is ``(k1, k2, part)``
    with part "re" or "im".  Ordering: all "re" vectors over the raster-order
    non-redundant half-spectrum, then all "im" vectors in the same order.
    """

    height: int
    width: int
    vectors: np.ndarray  # (D, H, W)
    index: tuple  # of (k1, k2, part)

    @property
    def dim(self) -> int:
        return self.height * self.width

    def matrix(self) -> np.ndarray:
        """(D, D) orthogonal matrix whose columns are the flattened vectors."""
        return self.vectors.reshape(self.dim, self.dim).T

    def find(self, k1: int, k2: int, part: str) -> int:
        return self.index.index((k1, k2, part))

    def save(self, path) -> None:
        tensorio.write_tensor(
            path,
            self.vectors,
            extra={
                "kind": "fourier-basis",
                "height": self.height,
                "width": self.width,
                "index": [[k1, k2, part] for k1, k2, part in self.index],
            },
        )

    @classmethod
    def load(cls, path) -> "FourierBasis":
        vectors, header = tensorio.read_tensor(path)
        if header.get("kind") != "fourier-basis":
            raise ValueError(f"{path} is not a fourier-basis container")
        index = tuple((k1, k2, part) for k1, k2, part in header["index"])
        return cls(header["height"], header["width"], vectors, index)


def half_spectrum_representatives(height: int, width: int) -> list:
    """Raster-order frequency pairs keeping one member per conjugate pair."""
    reps = []
    for k1 in range(height):
        for k2 in range(width):
            c1, c2 = _conj_index(k1, k2, height, width)
            if (k1, k2) <= (c1, c2):
                reps.append((k1, k2))
    return reps


def real_basis(height: int, width: int) -> FourierBasis:
    if height < 1 or width < 1:
        raise ValueError("extents must be >= 1")
    reps = half_spectrum_representatives(height, width)
    vectors, index = [], []
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    for k1, k2 in reps:
        spec = np.zeros((height, width), dtype=np.complex128)
        if is_self_conjugate(k1, k2, height, width):
            spec[k1, k2] = 1.0
        else:
            c1, c2 = _conj_index(k1, k2, height, width)
            spec[k1, k2] = inv_sqrt2
            spec[c1, c2] = inv_sqrt2
        vectors.append(np.fft.ifft2(spec, norm="ortho").real)
        index.append((k1, k2, "re"))
    for k1, k2 in reps:
        if is_self_conjugate(k1, k2, height, width):
            continue
        c1, c2 = _conj_index(k1, k2, height, width)
        spec = np.zeros((height, width), dtype=np.complex128)
        spec[k1, k2] = 1j * inv_sqrt2
        spec[c1, c2] = -1j * inv_sqrt2
        vectors.append(np.fft.ifft2(spec, norm="ortho").real)
        index.append((k1, k2, "im"))
    return FourierBasis(height, width, np.stack(vectors), tuple(index))


def spectrum_energy(v: np.ndarray) -> np.ndarray:
    """Squared DFT magnitudes, shifted so frequency (0,0) sits at the center.

    Real inputs give a spectrum already symmetric under frequency negation,
    which is the full-spectrum display convention.
    """
    energy = np.abs(dft2(v)) ** 2
    return np.fft.fftshift(energy)


def centered_position(k1: int, k2: int, height: int, width: int) -> tuple:
    """Pixel position of frequency (k1, k2) in the centered display layout."""
    return ((k1 + height // 2) % height, (k2 + width // 2) % width)
