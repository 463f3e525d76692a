import numpy as np
import pytest

from gmseq.cointegrate import (
    CointegrationSpec,
    check_cointegration,
    coint_factorized_forecast,
    coint_forecast,
    coint_operators,
    remainder_noise_density,
)
from gmseq.errors import DataError
from gmseq.forecast import (
    FunctionalSpec,
    apply_forecast,
    factorized_forecast,
    spectral_characteristic_finite,
)
from gmseq.increments import IncrementSpec, beta_transfer
from gmseq.operators import build_PTQ
from gmseq.spectra import (
    SpectralDensityGrid,
    density_from_increment_spectrum,
    grid_frequencies,
)

from oracles import exact_projection, steady_state_filter_error

M = 2048


def scalar_grid(values, label="f"):
    return SpectralDensityGrid(M, np.asarray(values, dtype=complex)[:, None, None], label)


def ma_samples(coeffs):
    lam = grid_frequencies(M)
    c = np.zeros(M, dtype=complex)
    for k, ck in enumerate(coeffs):
        c += ck * np.exp(-1j * lam * k)
    return np.abs(c) ** 2


def make_pair(alpha, f, g_vals, spec):
    b2 = np.abs(beta_transfer(spec, grid_frequencies(M))) ** 2
    p = scalar_grid(alpha**2 * f.values[:, 0, 0] + b2 * g_vals, "p")
    return CointegrationSpec(alpha, f, p)


@pytest.fixture(scope="module")
def walk_spec():
    return IncrementSpec([(1, 1, 1)])


@pytest.fixture(scope="module")
def white_f(walk_spec):
    return density_from_increment_spectrum(np.ones((M, 1, 1)), walk_spec)


# -- pair validation ---------------------------------------------------------


def test_alpha_must_be_nonzero_finite(white_f):
    p = white_f.relabel("p")
    with pytest.raises(ValueError):
        CointegrationSpec(0.0, white_f, p)
    with pytest.raises(ValueError):
        CointegrationSpec(np.nan, white_f, p)


def test_remainder_must_be_psd(white_f):
    p = scalar_grid(0.5 * white_f.values[:, 0, 0], "p")
    with pytest.raises(ValueError):
        CointegrationSpec(1.0, white_f, p)


def test_grids_must_match(white_f):
    small = SpectralDensityGrid(M // 2, np.ones((M // 2, 1, 1)), "p")
    with pytest.raises(ValueError):
        CointegrationSpec(1.0, white_f, small)


# -- effective noise density -------------------------------------------------


def test_remainder_density_recovers_noise(walk_spec, white_f):
    g_vals = ma_samples([1.1, 0.4])
    cs = make_pair(1.5, white_f, g_vals, walk_spec)
    g_star = remainder_noise_density(cs, walk_spec)
    assert np.max(np.abs(g_star.values[:, 0, 0] - g_vals)) < 1e-8


def test_zero_remainder_gives_zero_noise(walk_spec, white_f):
    cs = make_pair(2.0, white_f, np.zeros(M), walk_spec)
    g_star = remainder_noise_density(cs, walk_spec)
    assert np.max(np.abs(g_star.values)) < 1e-12


# -- operators ---------------------------------------------------------------


def test_operators_match_noise_model_at_unit_alpha(walk_spec, white_f):
    g_vals = ma_samples([0.9, -0.3])
    cs = make_pair(1.0, white_f, g_vals, walk_spec)
    Pa, Ta, Qa = coint_operators(cs, walk_spec, 12)
    P, T, Q = build_PTQ(white_f, scalar_grid(g_vals, "g"), walk_spec, 12)
    assert np.max(np.abs(Pa.blocks - P.blocks)) < 1e-10
    assert np.max(np.abs(Ta.blocks - T.blocks)) < 1e-10
    assert np.max(np.abs(Qa.blocks - Q.blocks)) < 1e-10


def test_operators_vanish_without_remainder(walk_spec, white_f):
    cs = make_pair(1.7, white_f, np.zeros(M), walk_spec)
    _, Ta, Qa = coint_operators(cs, walk_spec, 10)
    assert np.max(np.abs(Ta.blocks)) < 1e-12
    assert np.max(np.abs(Qa.blocks)) < 1e-12


def test_operator_P_is_hermitian(walk_spec, white_f):
    cs = make_pair(1.3, white_f, ma_samples([1.0, 0.2]), walk_spec)
    Pa, _, _ = coint_operators(cs, walk_spec, 10)
    mat = Pa.matrix()
    assert np.max(np.abs(mat - np.conj(mat.T))) < 1e-10


# -- forecasts ---------------------------------------------------------------


def test_unit_alpha_reduces_to_noise_model(walk_spec, white_f):
    g_vals = ma_samples([1.0, 0.35])
    cs = make_pair(1.0, white_f, g_vals, walk_spec)
    fn = FunctionalSpec.finite(np.array([[1.0 + 0j], [0.4]]))
    coint = coint_forecast(cs, walk_spec, fn, n_trunc=96)
    plain = spectral_characteristic_finite(
        white_f, scalar_grid(g_vals, "g"), walk_spec, fn, n_trunc=96
    )
    assert coint.mse == pytest.approx(plain.mse, abs=1e-8)
    assert np.max(np.abs(coint.h_samples - plain.h_samples)) < 1e-8
    assert np.max(np.abs(coint.filter_weights.entries - plain.filter_weights.entries)) < 1e-8


def test_unit_alpha_factorized_reduction(walk_spec, white_f):
    g_vals = ma_samples([1.0, 0.35])
    cs = make_pair(1.0, white_f, g_vals, walk_spec)
    fn = FunctionalSpec.single(0)
    coint = coint_factorized_forecast(cs, walk_spec, fn, n_coeffs=48, n_trunc=96)
    plain = factorized_forecast(
        white_f, scalar_grid(g_vals, "g"), walk_spec, fn, n_coeffs=48, n_trunc=96
    )
    assert coint.mse == pytest.approx(plain.mse, abs=1e-8)
    assert np.max(np.abs(coint.h_samples - plain.h_samples)) < 1e-8


def test_routes_agree_at_general_alpha(walk_spec, white_f):
    cs = make_pair(1.7, white_f, ma_samples([0.8, 0.25]), walk_spec)
    fn = FunctionalSpec.single(0)
    ker = coint_forecast(cs, walk_spec, fn, n_trunc=128)
    fac = coint_factorized_forecast(cs, walk_spec, fn, n_coeffs=48, n_trunc=128)
    assert fac.mse == pytest.approx(ker.mse, rel=1e-3)
    assert fac.mse == pytest.approx(ker.mse, rel=1e-9)
    assert ker.diagnostics["route"] == "coint-kernel"
    assert fac.diagnostics["route"] == "coint-factorized"


def test_scaled_walk_matches_exact_projection(walk_spec, white_f):
    # partner = 2 * walk + white remainder; forecasting the walk itself
    cs = make_pair(2.0, white_f, np.ones(M), walk_spec)
    sol = coint_forecast(cs, walk_spec, FunctionalSpec.single(0), n_trunc=96)
    mse_ref, taps_ref = exact_projection(
        [2.0 * np.eye(1)], [np.eye(1)], [1.0, -1.0], [[1.0]], 80
    )
    assert sol.mse == pytest.approx(mse_ref / 4.0, rel=1e-9)
    assert sol.mse == pytest.approx(steady_state_filter_error(4.0, 1.0) / 4.0, rel=1e-12)
    for k in range(-1, -9, -1):
        assert sol.filter_weights.at(k)[0] == pytest.approx(
            taps_ref[k + 80, 0] / 2.0, abs=1e-9
        )


def test_error_invariant_under_scale_splitting(walk_spec, white_f):
    # (f, p, alpha) -> (f / kappa^2, p, alpha * kappa) with weights
    # rescaled by kappa describes the same estimation problem
    g_vals = ma_samples([1.0, 0.3])
    kappa = 2.5
    a = np.array([[1.0 + 0j], [0.6]])
    base = make_pair(1.2, white_f, g_vals, walk_spec)
    split = CointegrationSpec(
        1.2 * kappa,
        SpectralDensityGrid(M, white_f.values / kappa**2, "f"),
        base.p,
    )
    sol_a = coint_forecast(base, walk_spec, FunctionalSpec.finite(a), n_trunc=96)
    sol_b = coint_forecast(
        split, walk_spec, FunctionalSpec.finite(kappa * a), n_trunc=96
    )
    assert sol_b.mse == pytest.approx(sol_a.mse, rel=1e-8)
    assert np.max(np.abs(sol_b.h_samples - sol_a.h_samples)) < 1e-8


def test_exact_proxy_observation(walk_spec, white_f):
    # partner = alpha * target exactly: forecasting through the proxy is
    # as good as observing the target itself
    cs = make_pair(2.0, white_f, np.zeros(M), walk_spec)
    sol = coint_forecast(cs, walk_spec, FunctionalSpec.single(0), n_trunc=96)
    assert sol.mse == pytest.approx(1.0, abs=1e-9)
    impulse = np.zeros(40)
    impulse[-1] = 1.0
    assert apply_forecast(impulse, sol, walk_spec) == pytest.approx(0.5, abs=1e-9)


def test_random_pairs_have_nonnegative_error(walk_spec, white_f):
    rng = np.random.default_rng(11)
    for _ in range(3):
        g_vals = ma_samples([1.0 + 0.3 * rng.uniform(), 0.4 * rng.uniform()])
        alpha = float(rng.uniform(0.5, 2.0)) * float(rng.choice([-1.0, 1.0]))
        cs = make_pair(alpha, white_f, g_vals, walk_spec)
        a = rng.normal(size=(2, 1)) + 0j
        sol = coint_forecast(cs, walk_spec, FunctionalSpec.finite(a), n_trunc=96)
        assert sol.mse >= 0.0


# -- stationarity screen -----------------------------------------------------


def test_screen_accepts_true_pair():
    rng = np.random.default_rng(2)
    xi = np.cumsum(rng.normal(size=4000))
    zeta = 2.0 * xi + rng.normal(size=4000)
    report = check_cointegration(zeta, xi, 2.0)
    assert report.stationary
    assert report.variance_slope < 0.4
    assert report.n_samples == 4000


def test_screen_rejects_independent_walks():
    rng = np.random.default_rng(3)
    xi = np.cumsum(rng.normal(size=4000))
    zeta = np.cumsum(rng.normal(size=4000))
    report = check_cointegration(zeta, xi, 1.0)
    assert not report.stationary
    assert report.low_frequency_share > 0.6


def test_screen_rejects_zero_alpha_and_bad_shapes():
    with pytest.raises(ValueError):
        check_cointegration(np.zeros(64), np.zeros(64), 0.0)
    with pytest.raises(DataError):
        check_cointegration(np.zeros(64), np.zeros(32), 1.0)
    with pytest.raises(DataError):
        check_cointegration(np.zeros(8), np.zeros(8), 1.0)


def test_screen_handles_exact_proxy():
    x = np.cumsum(np.ones(128))
    report = check_cointegration(3.0 * x, x, 3.0)
    assert report.stationary
    assert report.variance_slope == 0.0
