import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nadlab import spectral
from nadlab.rng import Rng


def test_constant_image_is_pure_dc():
    c = 2.5
    spec = spectral.dft2(np.full((8, 8), c))
    assert abs(spec[0, 0] - c * np.sqrt(64)) < 1e-10
    spec[0, 0] = 0
    assert np.abs(spec).max() < 1e-12


def test_roundtrip_and_parseval():
    x = Rng(0).gaussian((16, 16))
    spec = spectral.dft2(x)
    assert np.abs(spectral.idft2(spec) - x).max() < 1e-10
    assert abs(np.sum(np.abs(spec) ** 2) - np.sum(x**2)) < 1e-10


def test_dft2_rejects_bad_input():
    with pytest.raises(ValueError):
        spectral.dft2(np.ones(5))
    with pytest.raises(ValueError):
        spectral.dft2(np.ones((2, 2), dtype=complex))


def test_basis_32x32_complete_and_orthonormal():
    basis = spectral.real_basis(32, 32)
    assert basis.vectors.shape == (1024, 32, 32)
    mat = basis.matrix()
    gram = mat.T @ mat
    assert np.abs(gram - np.eye(1024)).max() < 1e-10


def test_basis_part_counts_and_four_gaps():
    basis = spectral.real_basis(32, 32)
    parts = [part for (_, _, part) in basis.index]
    self_conj = [
        (k1, k2)
        for k1 in range(32)
        for k2 in range(32)
        if spectral.is_self_conjugate(k1, k2, 32, 32)
    ]
    # DC plus the three Nyquist corners: the four display gaps of the
    # imaginary-part sweep
    assert self_conj == [(0, 0), (0, 16), (16, 0), (16, 16)]
    n_re = parts.count("re")
    n_im = parts.count("im")
    assert n_re == (1024 + len(self_conj)) // 2
    assert n_im == 1024 - n_re
    assert parts == ["re"] * n_re + ["im"] * n_im  # ordering: all re, then im


def test_basis_1x2_is_sum_difference_pair():
    basis = spectral.real_basis(1, 2)
    mat = basis.matrix()
    want = {tuple(np.round(v, 12)) for v in ([1, 1] / np.sqrt(2), [1, -1] / np.sqrt(2))}
    got = set()
    for i in range(2):
        col = mat[:, i]
        if col[0] < 0:
            col = -col
        got.add(tuple(np.round(col, 12)))
    assert got == want


def test_basis_sparsity_at_most_two_bins():
    basis = spectral.real_basis(6, 5)
    for vec in basis.vectors:
        spec = np.abs(spectral.dft2(vec))
        assert np.sum(spec > 1e-9) <= 2


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_basis_completeness_any_extent(h, w, seed):
    basis = spectral.real_basis(h, w)
    d = h * w
    assert basis.vectors.shape[0] == d
    mat = basis.matrix()
    assert np.abs(mat.T @ mat - np.eye(d)).max() < 1e-9
    x = Rng(seed).gaussian((h, w))
    coeffs = mat.T @ x.ravel()
    assert np.abs(mat @ coeffs - x.ravel()).max() < 1e-9


def test_spectrum_energy_of_basis_element():
    basis = spectral.real_basis(8, 8)
    idx = basis.find(1, 2, "re")
    energy = spectral.spectrum_energy(basis.vectors[idx])
    assert np.sum(energy > 1e-12) == 2  # the conjugate pair
    assert abs(energy.sum() - 1.0) < 1e-10
    r, c = spectral.centered_position(1, 2, 8, 8)
    assert energy[r, c] > 0.49


def test_spectrum_energy_constant_is_center_pixel():
    energy = spectral.spectrum_energy(np.full((8, 8), 3.0))
    assert energy[4, 4] > 0
    energy[4, 4] = 0
    assert np.abs(energy).max() < 1e-12


def test_spectrum_energy_parseval():
    v = Rng(3).gaussian((8, 8))
    energy = spectral.spectrum_energy(v)
    assert abs(energy.sum() - np.sum(v**2)) < 1e-10


def test_basis_save_load_roundtrip(tmp_path):
    basis = spectral.real_basis(4, 4)
    path = tmp_path / "basis.nab"
    basis.save(path)
    back = spectral.FourierBasis.load(path)
    assert np.array_equal(back.vectors, basis.vectors)
    assert back.index == basis.index


def test_extent_validation():
    with pytest.raises(ValueError):
        spectral.real_basis(0, 4)
