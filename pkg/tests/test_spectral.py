import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ringcast.errors import StructuralError
from ringcast.spectral import (
    Spectrum,
    dft,
    dft_basis,
    dft_rows,
    idft,
    idft_rows,
    naive_dft,
    naive_idft,
)


class TestNaiveOracle:
    """The O(N^2) summation pair must be a self-consistent inverse pair
    before anything is checked against it."""

    def test_roundtrip(self, rng):
        for n in (1, 2, 3, 5, 17):
            s = rng.normal(size=n)
            np.testing.assert_allclose(naive_idft(naive_dft(s)), s, atol=1e-10)

    def test_constant_signal(self):
        spec = naive_dft(np.full(8, 2.5))
        assert abs(spec.real_part[0] - 8 * 2.5) < 1e-10
        np.testing.assert_allclose(spec.real_part[1:], 0.0, atol=1e-10)
        np.testing.assert_allclose(spec.imag_part, 0.0, atol=1e-10)


class TestDft:
    def test_unit_impulse(self):
        spec = dft(np.array([1.0, 0.0, 0.0, 0.0]))
        np.testing.assert_allclose(spec.real_part, np.ones(4), atol=1e-12)
        np.testing.assert_allclose(spec.imag_part, np.zeros(4), atol=1e-12)

    def test_constant_signal(self):
        spec = dft(np.full(6, -1.5))
        assert abs(spec.real_part[0] - 6 * -1.5) < 1e-9
        np.testing.assert_allclose(spec.real_part[1:], 0.0, atol=1e-9)
        np.testing.assert_allclose(spec.imag_part, 0.0, atol=1e-9)

    def test_matches_naive_oracle_length_17(self, rng):
        s = rng.normal(size=17)
        fast, slow = dft(s), naive_dft(s)
        np.testing.assert_allclose(fast.real_part, slow.real_part, atol=1e-10)
        np.testing.assert_allclose(fast.imag_part, slow.imag_part, atol=1e-10)

    def test_matches_naive_oracle_all_lengths(self, rng):
        for n in range(1, 65):
            s = rng.normal(size=n)
            fast, slow = dft(s), naive_dft(s)
            np.testing.assert_allclose(fast.real_part, slow.real_part, atol=1e-9)
            np.testing.assert_allclose(fast.imag_part, slow.imag_part, atol=1e-9)

    def test_conjugate_symmetry(self, rng):
        n = 12
        spec = dft(rng.normal(size=n))
        k = np.arange(n)
        np.testing.assert_allclose(spec.real_part, spec.real_part[(n - k) % n], atol=1e-9)
        np.testing.assert_allclose(spec.imag_part, -spec.imag_part[(n - k) % n], atol=1e-9)

    def test_empty_signal_raises(self):
        with pytest.raises(StructuralError):
            dft(np.array([]))
        with pytest.raises(StructuralError):
            naive_dft(np.array([]))


class TestIdft:
    def test_roundtrip_all_lengths(self, rng):
        for n in range(1, 65):
            s = rng.normal(size=n)
            np.testing.assert_allclose(idft(dft(s)), s, atol=1e-9)

    def test_zero_spectrum(self):
        out = idft(Spectrum(np.zeros(9), np.zeros(9)))
        np.testing.assert_array_equal(out, np.zeros(9))

    def test_dc_spectrum_gives_ones(self):
        n = 7
        a = np.zeros(n)
        a[0] = n
        np.testing.assert_allclose(idft(Spectrum(a, np.zeros(n))), np.ones(n), atol=1e-12)

    def test_shape_mismatch_raises(self):
        with pytest.raises(StructuralError):
            Spectrum(np.zeros(4), np.zeros(5))

    def test_linearity(self, rng):
        x, y = rng.normal(size=16), rng.normal(size=16)
        a, b = 2.5, -0.75
        s1 = dft(a * x + b * y)
        sx, sy = dft(x), dft(y)
        np.testing.assert_allclose(s1.real_part, a * sx.real_part + b * sy.real_part, atol=1e-9)
        np.testing.assert_allclose(s1.imag_part, a * sx.imag_part + b * sy.imag_part, atol=1e-9)


class TestDftRows:
    def test_single_row_equals_vector_dft(self, rng):
        v = rng.normal(size=10)
        row = dft_rows(v[None, :])
        vec = dft(v)
        np.testing.assert_allclose(row.real_part[0], vec.real_part, atol=1e-12)
        np.testing.assert_allclose(row.imag_part[0], vec.imag_part, atol=1e-12)

    def test_row_independence_under_permutation(self, rng):
        m = rng.normal(size=(6, 8))
        perm = np.array([3, 1, 5, 0, 2, 4])
        direct = dft_rows(m[perm])
        permuted = dft_rows(m)
        np.testing.assert_allclose(direct.real_part, permuted.real_part[perm], atol=1e-12)
        np.testing.assert_allclose(direct.imag_part, permuted.imag_part[perm], atol=1e-12)

    def test_matches_per_row_oracle(self, rng):
        m = rng.normal(size=(5, 16))
        spec = dft_rows(m)
        for h in range(5):
            slow = naive_dft(m[h])
            np.testing.assert_allclose(spec.real_part[h], slow.real_part, atol=1e-10)
            np.testing.assert_allclose(spec.imag_part[h], slow.imag_part, atol=1e-10)

    def test_rows_roundtrip(self, rng):
        m = rng.normal(size=(4, 9))
        np.testing.assert_allclose(idft_rows(dft_rows(m)), m, atol=1e-10)


class TestBasisMatrices:
    def test_forward_matches_dft(self, rng):
        n = 12
        cos_b, sin_b = dft_basis(n)
        s = rng.normal(size=n)
        spec = dft(s)
        np.testing.assert_allclose(s @ cos_b, spec.real_part, atol=1e-9)
        np.testing.assert_allclose(s @ sin_b, spec.imag_part, atol=1e-9)

    def test_inverse_matches_idft(self, rng):
        n = 12
        cos_b, sin_b = dft_basis(n)
        s = rng.normal(size=n)
        spec = dft(s)
        recon = (spec.real_part @ cos_b + spec.imag_part @ sin_b) / n
        np.testing.assert_allclose(recon, s, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(min_value=1, max_value=48),
    seed=st.integers(min_value=0, max_value=2**31 - 1),
)
def test_parseval_identity(n, seed):
    s = np.random.default_rng(seed).normal(size=n)
    spec = dft(s)
    energy_time = float(np.sum(s**2))
    energy_freq = float(np.sum(spec.real_part**2 + spec.imag_part**2)) / n
    assert energy_freq == pytest.approx(energy_time, rel=1e-9, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(min_value=2, max_value=48),
    shift=st.integers(min_value=0, max_value=47),
    seed=st.integers(min_value=0, max_value=2**31 - 1),
)
def test_circular_shift_preserves_magnitude(n, shift, seed):
    s = np.random.default_rng(seed).normal(size=n)
    mag = dft(s).magnitude()
    mag_shifted = dft(np.roll(s, shift % n)).magnitude()
    np.testing.assert_allclose(mag, mag_shifted, atol=1e-9)
