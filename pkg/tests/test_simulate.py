import numpy as np
import pytest

from gmseq._kernels import (
    _ma_filter_py,
    _rebuild_from_increments_py,
    _scalar_filter_py,
    ma_filter_kernel,
    rebuild_from_increments_kernel,
    scalar_filter_kernel,
)
from gmseq.errors import ConfigError, NumericError
from gmseq.forecast import FunctionalSpec
from gmseq.increments import IncrementSpec
from gmseq.simulate import (
    SimulationConfig,
    add_noise,
    brute_force_projection,
    generate_gm_sequence,
)
from gmseq.spectra import (
    DensityModel,
    SpectralDensityGrid,
    density_from_increment_spectrum,
    eval_density,
    grid_frequencies,
)

from oracles import exact_projection

M = 2048
PHI = (1.0 + np.sqrt(5.0)) / 2.0


def scalar_grid(values, label="f"):
    return SpectralDensityGrid(M, np.asarray(values, dtype=complex)[:, None, None], label)


@pytest.fixture(scope="module")
def walk_spec():
    return IncrementSpec([(1, 1, 1)])


@pytest.fixture(scope="module")
def white_f(walk_spec):
    return density_from_increment_spectrum(np.ones((M, 1, 1)), walk_spec)


# -- configuration -----------------------------------------------------------


def test_config_rejects_bad_fields(walk_spec):
    white = DensityModel.constant(1.0)
    with pytest.raises(ConfigError):
        SimulationConfig(walk_spec, white, length=0)
    with pytest.raises(ConfigError):
        SimulationConfig(walk_spec, white, length=10, initial_values="warm")
    with pytest.raises(ConfigError):
        SimulationConfig(walk_spec, white, length=10, burn_in=100)
    two = IncrementSpec([(1, 1, 1)], period=2)
    with pytest.raises(ConfigError):
        SimulationConfig(two, white, length=10)


def test_burn_in_default_covers_window(walk_spec):
    cfg = SimulationConfig(walk_spec, DensityModel.constant(1.0), length=10)
    assert cfg.effective_burn_in() >= 10 * cfg.window()
    frac = IncrementSpec([(1, 1, 0, 0.3)])
    cfg_frac = SimulationConfig(frac, DensityModel.constant(1.0), length=10)
    assert cfg_frac.window() == 2048


# -- path generation ---------------------------------------------------------


def test_walk_increments_are_exact_differences(walk_spec):
    cfg = SimulationConfig(walk_spec, DensityModel.constant(1.0), length=4000, seed=1)
    xi, inc = generate_gm_sequence(cfg)
    assert xi.shape == (4000,)
    assert np.allclose(np.diff(xi), inc[1:], atol=1e-12)


def test_walk_variance_grows_one_per_step(walk_spec):
    cfg = SimulationConfig(walk_spec, DensityModel.constant(1.0), length=60000, seed=2)
    xi, _ = generate_gm_sequence(cfg)
    lags = np.arange(1, 9)
    msd = np.array([np.mean((xi[k:] - xi[:-k]) ** 2) for k in lags])
    slope = np.polyfit(lags, msd, 1)[0]
    assert slope == pytest.approx(1.0, rel=0.1)


def test_stationary_path_matches_target_density():
    flat = IncrementSpec([(1, 1, 0)])
    model = DensityModel.rational([1.0, 0.6], [1.0])
    cfg = SimulationConfig(flat, model, length=1 << 16, seed=3)
    x, inc = generate_gm_sequence(cfg)
    assert np.array_equal(x, inc)
    periodogram = np.abs(np.fft.rfft(x - np.mean(x))) ** 2 / x.size
    target = eval_density(model, M).values[:, 0, 0].real
    lam_t = grid_frequencies(M)
    lam_p = np.linspace(0.0, np.pi, periodogram.size)
    bands = np.linspace(0.0, np.pi, 17)
    for lo, hi in zip(bands[:-1], bands[1:]):
        est = np.mean(periodogram[(lam_p >= lo) & (lam_p < hi)])
        ref = np.mean(target[(lam_t >= lo) & (lam_t < hi)])
        assert est == pytest.approx(ref, rel=0.2)


def test_zero_innovations_extend_constantly(walk_spec):
    cfg = SimulationConfig(walk_spec, DensityModel.constant(0.0), length=50, seed=4)
    xi, inc = generate_gm_sequence(cfg)
    assert np.array_equal(xi, np.zeros(50))
    assert np.array_equal(inc, np.zeros(50))


def test_seeds_reproduce_paths(walk_spec):
    cfg = SimulationConfig(walk_spec, DensityModel.constant(1.0), length=200, seed=9)
    xi1, inc1 = generate_gm_sequence(cfg)
    xi2, inc2 = generate_gm_sequence(cfg)
    assert np.array_equal(xi1, xi2)
    assert np.array_equal(inc1, inc2)
    other = SimulationConfig(walk_spec, DensityModel.constant(1.0), length=200, seed=10)
    assert not np.array_equal(generate_gm_sequence(other)[0], xi1)


def test_vector_paths_difference_componentwise():
    spec = IncrementSpec([(1, 1, 1)], period=2)
    cfg = SimulationConfig(spec, DensityModel.constant(np.eye(2)), length=300, seed=5)
    xi, inc = generate_gm_sequence(cfg)
    assert xi.shape == (300, 2)
    assert np.allclose(np.diff(xi, axis=0), inc[1:], atol=1e-12)


def test_fractional_path_is_finite_and_reproducible():
    spec = IncrementSpec([(1, 1, 0, 0.3)])
    cfg = SimulationConfig(spec, DensityModel.constant(1.0), length=400, seed=6)
    xi, inc = generate_gm_sequence(cfg)
    assert xi.shape == (400,)
    assert np.all(np.isfinite(xi))
    assert np.std(xi) > 0.5
    xi2, _ = generate_gm_sequence(cfg)
    assert np.array_equal(xi, xi2)


# -- observation noise -------------------------------------------------------


def test_add_noise_identity_cases(walk_spec):
    xi = np.arange(20.0)
    assert np.array_equal(add_noise(xi, None), xi)
    assert np.array_equal(add_noise(xi, DensityModel.constant(0.0), seed=1), xi)


def test_add_noise_variance_matches_density():
    xi = np.zeros(200000)
    noisy = add_noise(xi, DensityModel.rational([1.0, 0.5], [1.0]), seed=7)
    assert np.var(noisy) == pytest.approx(1.25, rel=0.05)
    assert np.mean(noisy) == pytest.approx(0.0, abs=0.02)


def test_add_noise_deterministic_and_independent_of_signal():
    g = DensityModel.constant(2.25)
    a = add_noise(np.zeros(500), g, seed=11)
    b = add_noise(np.zeros(500), g, seed=11)
    assert np.array_equal(a, b)
    c = add_noise(np.ones(500), g, seed=11)
    assert np.allclose(c - 1.0, a)


def test_add_noise_dimension_guard():
    with pytest.raises(ConfigError):
        add_noise(np.zeros((50, 2)), DensityModel.constant(1.0), seed=0)


# -- dense projection oracle ---------------------------------------------------


def test_projection_white_noise_has_no_memory():
    flat = IncrementSpec([(1, 1, 0)])
    f = scalar_grid(np.full(M, 1.3))
    g = scalar_grid(np.zeros(M), "g")
    taps, mse = brute_force_projection(f, g, flat, FunctionalSpec.single(0), 30)
    assert np.max(np.abs(taps.entries)) < 1e-10
    assert mse == pytest.approx(1.3, rel=1e-10)


def test_projection_matches_time_domain_oracle(walk_spec, white_f):
    g = scalar_grid(np.ones(M), "g")
    taps, mse = brute_force_projection(
        white_f, g, walk_spec, FunctionalSpec.single(0), 60
    )
    mse_ref, taps_ref = exact_projection(
        [np.eye(1)], [np.eye(1)], [1.0, -1.0], [[1.0]], 60
    )
    assert mse == pytest.approx(mse_ref, rel=1e-10)
    assert np.max(np.abs(taps.entries - taps_ref)) < 1e-9
    assert mse == pytest.approx(PHI, rel=1e-6)


def test_projection_matches_oracle_matrix_case():
    rng = np.random.default_rng(7)
    cf = [np.eye(2) + 0.1 * rng.normal(size=(2, 2)), 0.4 * rng.normal(size=(2, 2))]
    cg = [0.6 * np.eye(2) + 0.05 * rng.normal(size=(2, 2)),
          0.2 * rng.normal(size=(2, 2))]
    spec = IncrementSpec([(1, 1, 1)], period=2)
    lam = grid_frequencies(M)

    def ma_vals(coeffs):
        C = np.zeros((M, 2, 2), dtype=complex)
        for k, ck in enumerate(coeffs):
            C += ck[None] * np.exp(-1j * lam * k)[:, None, None]
        return np.einsum("mts,mus->mtu", C, np.conj(C))

    f = density_from_increment_spectrum(ma_vals(cf), spec)
    g = SpectralDensityGrid(M, ma_vals(cg), "g")
    a = np.array([[1.0, 0.5], [0.3, -0.2], [0.0, 0.1]])
    taps, mse = brute_force_projection(f, g, spec, FunctionalSpec.finite(a + 0j), 40)
    mse_ref, taps_ref = exact_projection(cf, cg, [1.0, -1.0], a, 40)
    assert mse == pytest.approx(mse_ref, rel=1e-9)
    assert np.max(np.abs(taps.entries - taps_ref)) < 1e-8


def test_projection_error_shrinks_with_history(walk_spec, white_f):
    g = scalar_grid(np.ones(M), "g")
    fn = FunctionalSpec.single(0)
    errors = [
        brute_force_projection(white_f, g, walk_spec, fn, L)[1]
        for L in (5, 10, 20, 40)
    ]
    assert all(b <= a + 1e-12 for a, b in zip(errors, errors[1:]))
    assert errors[-1] == pytest.approx(PHI, rel=0.02)
    assert errors[-1] >= PHI - 1e-9


def test_projection_guards(walk_spec, white_f):
    g = scalar_grid(np.ones(M), "g")
    with pytest.raises(ValueError):
        brute_force_projection(white_f, g, walk_spec, FunctionalSpec.single(0), 4001)
    with pytest.raises(ValueError):
        brute_force_projection(white_f, g, walk_spec, FunctionalSpec.single(0), 0)
    zero = scalar_grid(np.zeros(M))
    with pytest.raises(NumericError):
        brute_force_projection(
            zero, scalar_grid(np.zeros(M), "g"), walk_spec, FunctionalSpec.single(0), 10
        )
    inf = FunctionalSpec.infinite(0.5 ** np.arange(30)[:, None])
    with pytest.raises(ValueError):
        brute_force_projection(white_f, g, walk_spec, inf, 10)


# -- kernel dual paths ---------------------------------------------------------


def test_compiled_kernels_match_reference():
    rng = np.random.default_rng(0)
    inc = rng.normal(size=(80, 2))
    e = np.array([1.0, -0.4, 0.1])
    assert np.allclose(
        rebuild_from_increments_kernel(inc, e), _rebuild_from_increments_py(inc, e)
    )
    eps = rng.normal(size=(50, 2))
    phi = rng.normal(size=(4, 2, 2))
    assert np.allclose(ma_filter_kernel(eps, phi), _ma_filter_py(eps, phi))
    h = rng.normal(size=6)
    assert np.allclose(scalar_filter_kernel(eps, h), _scalar_filter_py(eps, h))
