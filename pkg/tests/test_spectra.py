import numpy as np
import pytest

from gmseq.errors import ConfigError, NumericError
from gmseq.increments import IncrementSpec
from gmseq.spectra import (
    DensityModel,
    SpectralDensityGrid,
    density_from_increment_spectrum,
    eval_density,
    fourier_coeffs,
    fractional_density_transform,
    grid_frequencies,
    increment_spectrum_from_density,
    minimality_check,
    noisy_density,
    structural_function,
    trig_synthesis,
)
from oracles import fourier_coeff_sum

M = 512


def unit_grid(label="f", dim=1):
    vals = np.tile(np.eye(dim, dtype=complex), (M, 1, 1))
    return SpectralDensityGrid(M, vals, label)


def test_grid_size_must_be_power_of_two():
    with pytest.raises(ConfigError):
        SpectralDensityGrid(100, np.ones((100, 1, 1), dtype=complex))
    with pytest.raises(ConfigError):
        SpectralDensityGrid(32, np.ones((32, 1, 1), dtype=complex))


def test_grid_rejects_non_hermitian_and_indefinite():
    vals = np.tile(np.array([[1.0, 1.0], [0.0, 1.0]], dtype=complex), (M, 1, 1))
    with pytest.raises(NumericError):
        SpectralDensityGrid(M, vals)
    neg = -np.ones((M, 1, 1), dtype=complex)
    with pytest.raises(NumericError):
        SpectralDensityGrid(M, neg)


def test_rational_model_moving_average():
    model = DensityModel.rational([1.0, 0.5], [1.0])
    f = eval_density(model, M)
    lam = f.frequencies
    i0 = int(np.argmin(np.abs(lam)))
    assert f.values[i0, 0, 0].real == pytest.approx(2.25, abs=1e-12)
    assert f.values[0, 0, 0].real == pytest.approx(0.25, abs=1e-12)


def test_rational_model_denominator_guard():
    model = DensityModel.rational([1.0], [1.0, -1.0])
    with pytest.raises(NumericError):
        eval_density(model, M)


def test_model_dict_roundtrip():
    num = np.array([[[1.0, 0.2j], [-0.2j, 0.5]], [[0.3, 0.0], [0.0, 0.1]]])
    model = DensityModel.rational(num, [1.0, 0.4])
    clone = DensityModel.from_dict(model.to_dict())
    assert np.allclose(clone.num_coeffs, model.num_coeffs)
    assert np.allclose(clone.den_coeffs, model.den_coeffs)
    const = DensityModel.constant([[2.0, 1j], [-1j, 3.0]])
    clone2 = DensityModel.from_dict(const.to_dict())
    assert np.allclose(clone2.const, const.const)
    tab = DensityModel.tabulated(unit_grid())
    with pytest.raises(ConfigError):
        tab.to_dict()


def test_fourier_coeffs_of_moving_average():
    f = eval_density(DensityModel.rational([1.0, 0.5], [1.0]), M)
    c = fourier_coeffs(f, -2, 2)
    assert np.allclose(
        c[:, 0, 0], [0.0, 0.5, 1.25, 0.5, 0.0], atol=1e-12
    )


def test_fourier_coeffs_against_direct_sum():
    rng = np.random.default_rng(3)
    coeffs = rng.standard_normal(9) + 1j * rng.standard_normal(9)
    coeffs = coeffs + np.conj(coeffs[::-1])  # real-valued trig polynomial
    vals = trig_synthesis(coeffs, -4, M)
    got = fourier_coeffs(vals.real.astype(complex)[:, None, None], -6, 6)
    for j, k in enumerate(range(-6, 7)):
        expect = fourier_coeff_sum(vals.real, k)
        assert got[j, 0, 0] == pytest.approx(expect, abs=1e-12)


def test_fourier_aliasing_guard():
    f = unit_grid()
    with pytest.raises(ConfigError):
        fourier_coeffs(f, -200, 200)


def test_synthesis_wraps_wide_bands_exactly():
    rng = np.random.default_rng(5)
    n = 700  # wider than the grid
    coeffs = rng.standard_normal(n)
    small = 64
    lam = grid_frequencies(small)
    direct = np.zeros(small, dtype=complex)
    for j, c in enumerate(coeffs):
        direct += c * np.exp(1j * lam * j)
    got = trig_synthesis(coeffs, 0, small)
    assert np.max(np.abs(got - direct)) < 1e-9


def test_structural_function_white_increments():
    spec = IncrementSpec([(1, 1, 1)])
    lam = grid_frequencies(M)
    fb = SpectralDensityGrid(M, (lam**2).astype(complex)[:, None, None], "f")
    assert structural_function(fb, spec, 0)[0, 0].real == pytest.approx(2.0, abs=1e-8)
    assert structural_function(fb, spec, 1)[0, 0].real == pytest.approx(-1.0, abs=1e-8)
    assert structural_function(fb, spec, 5)[0, 0].real == pytest.approx(0.0, abs=1e-8)


def test_structural_function_mixed_steps_symmetry():
    spec = IncrementSpec([(1, 1, 1)])
    f = unit_grid()
    d12 = structural_function(f, spec, 3, steps_left=[1], steps_right=[2])
    d21 = structural_function(f, spec, -3, steps_left=[2], steps_right=[1])
    assert np.allclose(d12, np.conj(d21).T, atol=1e-12)


def test_noisy_density_combines_with_kernel_weight():
    spec = IncrementSpec([(1, 1, 1)])
    f = unit_grid("f")
    g = unit_grid("g")
    p = noisy_density(f, g, spec)
    lam = p.frequencies
    i0 = int(np.argmin(np.abs(lam)))
    assert p.values[i0, 0, 0].real == pytest.approx(1.0, abs=1e-12)
    iq = int(np.argmin(np.abs(lam - np.pi / 2)))
    assert p.values[iq, 0, 0].real == pytest.approx(1.0 + lam[iq] ** 2, abs=1e-10)


def test_minimality_finite_case_passes():
    spec = IncrementSpec([(1, 1, 1)])
    res = minimality_check(unit_grid("f"), unit_grid("g"), spec)
    assert res.passed
    assert np.isfinite(res.value)


def test_minimality_divergent_case_reports_frequency():
    spec = IncrementSpec([(1, 1, 1)])
    lam = grid_frequencies(M)
    chi2 = np.abs(1 - np.exp(-1j * lam)) ** 2
    f = SpectralDensityGrid(M, chi2.astype(complex)[:, None, None], "f")
    g = SpectralDensityGrid(M, np.zeros((M, 1, 1), dtype=complex), "g")
    res = minimality_check(f, g, spec)
    assert not res.passed
    assert res.offending_frequency == pytest.approx(0.0, abs=1e-12)


def test_fractional_density_transform_matches_closed_form():
    spec = IncrementSpec([(1, 1, 0, 0.3)])
    base = unit_grid("f_tilde")
    out = fractional_density_transform(base, spec, window=4096)
    lam = out.frequencies
    iq = int(np.argmin(np.abs(lam - np.pi / 2)))
    expect = np.abs(2 * np.sin(lam[iq] / 2)) ** (-0.6)
    assert out.values[iq, 0, 0].real == pytest.approx(expect, rel=5e-3)


def test_fractional_density_transform_requires_bounded_base():
    spec = IncrementSpec([(1, 1, 0, 0.3)])
    lam = grid_frequencies(M)
    vals = (np.abs(lam) / np.pi).astype(complex)[:, None, None]
    bad = SpectralDensityGrid(M, vals, "f_tilde")
    with pytest.raises(NumericError):
        fractional_density_transform(bad, spec)


def test_convention_converters_roundtrip():
    spec = IncrementSpec([(1, 2, 1)])
    f = unit_grid("f")
    back = density_from_increment_spectrum(increment_spectrum_from_density(f, spec), spec)
    assert np.max(np.abs(back.values - f.values)) < 1e-12
