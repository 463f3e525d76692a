import numpy as np
import pytest

from gmseq.factorize import (
    FactorizationError,
    canonical_factorize,
    factorize_increment_weighted,
    invert_factor,
)
from gmseq.increments import IncrementSpec
from gmseq.spectra import DensityModel, SpectralDensityGrid, eval_density

M = 512


def grid_of(values):
    vals = np.asarray(values, dtype=complex)
    if vals.ndim == 1:
        vals = vals[:, None, None]
    return SpectralDensityGrid(M, vals, "f")


def test_scalar_moving_average_is_recovered():
    f = eval_density(DensityModel.rational([1.0, 0.5], [1.0]), M)
    res = canonical_factorize(f, n_coeffs=32)
    assert res.coeffs[0, 0, 0] == pytest.approx(1.0, abs=1e-10)
    assert res.coeffs[1, 0, 0] == pytest.approx(0.5, abs=1e-10)
    assert np.max(np.abs(res.coeffs[2:, 0, 0])) < 1e-10
    assert res.residual < 1e-10


def test_scalar_autoregressive_geometric_tail():
    f = eval_density(DensityModel.rational([1.0], [1.0, -0.4]), M)
    res = canonical_factorize(f, n_coeffs=48)
    for k in range(6):
        assert res.coeffs[k, 0, 0].real == pytest.approx(0.4**k, rel=1e-8)
    assert res.residual < 1e-10


def test_matrix_factor_recovers_lower_triangular_form():
    num = np.zeros((2, 2, 2), dtype=complex)
    num[0] = [[1.0, 0.0], [0.3, 1.0]]
    num[1] = [[0.4, 0.1], [0.0, 0.2]]
    f = eval_density(DensityModel.rational(num, [1.0]), M)
    res = canonical_factorize(f, n_coeffs=24)
    assert res.converged
    assert res.residual < 1e-10
    assert np.allclose(res.coeffs[0], num[0], atol=1e-8)
    assert np.allclose(res.coeffs[1], num[1], atol=1e-8)


def test_normalization_invariants():
    rng = np.random.default_rng(11)
    num = rng.standard_normal((3, 2, 2)) + 1j * rng.standard_normal((3, 2, 2))
    f = eval_density(DensityModel.rational(num, [1.0]), M)
    res = canonical_factorize(f, n_coeffs=32)
    th0 = res.coeffs[0]
    assert abs(th0[0, 1]) == 0.0
    assert th0[0, 0].real >= 0 and th0[1, 1].real >= 0
    assert abs(th0[0, 0].imag) < 1e-10 and abs(th0[1, 1].imag) < 1e-10
    assert res.residual < 1e-8


def test_invert_factor_convolves_to_identity():
    num = np.zeros((2, 2, 2), dtype=complex)
    num[0] = [[1.0, 0.0], [0.2, 0.8]]
    num[1] = [[0.3, 0.1], [-0.1, 0.2]]
    psi = invert_factor(num, 12)
    for n in range(12):
        acc = sum(num[k] @ psi[n - k] for k in range(min(n, 1) + 1))
        expect = np.eye(2) if n == 0 else np.zeros((2, 2))
        assert np.allclose(acc, expect, atol=1e-12)


def test_weighted_factorization_extracts_designed_zero():
    zero = grid_of(np.zeros(M))
    one = grid_of(np.ones(M)).relabel("g")
    spec = IncrementSpec([(1, 1, 1)])
    res = factorize_increment_weighted(zero, one, spec, n_coeffs=32)
    assert res.coeffs[0, 0, 0] == pytest.approx(1.0, abs=1e-9)
    assert res.coeffs[1, 0, 0] == pytest.approx(-1.0, abs=1e-9)
    assert np.max(np.abs(res.coeffs[2:, 0, 0])) < 1e-9
    assert res.residual < 1e-9


def test_weighted_factorization_smooth_case():
    one_f = grid_of(np.ones(M))
    one_g = grid_of(np.ones(M)).relabel("g")
    spec = IncrementSpec([(1, 1, 1)])
    res = factorize_increment_weighted(one_f, one_g, spec, n_coeffs=64)
    assert res.residual < 5e-3


def test_weighted_factorization_rejects_fractional():
    one = grid_of(np.ones(M))
    spec = IncrementSpec([(1, 1, 0, 0.3)])
    with pytest.raises(FactorizationError):
        factorize_increment_weighted(one, one.relabel("g"), spec, 16)


def test_nonpositive_target_rejected():
    with pytest.raises(FactorizationError):
        canonical_factorize(grid_of(np.zeros(M)), 8)


def test_cepstral_method_is_scalar_only():
    vals = np.tile(np.eye(2, dtype=complex), (M, 1, 1))
    with pytest.raises(ValueError):
        canonical_factorize(SpectralDensityGrid(M, vals, "f"), 8, method="cepstral")
