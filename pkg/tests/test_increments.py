import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmseq.increments import (
    IncrementSpec,
    apply_increment,
    beta_transfer,
    chi_transfer,
    dmu_coefficients,
    fractional_expansion,
    gegenbauer_coeffs,
    increment_polynomial,
    kernel_ratio,
)
from oracles import binomial_series, brute_apply, gegenbauer_closed_form


def test_simple_difference_polynomial():
    e = increment_polynomial(IncrementSpec([(1, 1, 1)]))
    assert e.coeffs.tolist() == [1.0, -1.0]
    assert e.degree == 1


def test_squared_double_step_polynomial():
    e = increment_polynomial(IncrementSpec([(2, 1, 2)]))
    assert e.coeffs.tolist() == [1.0, 0.0, -2.0, 0.0, 1.0]


def test_mixed_pattern_polynomial():
    e = increment_polynomial(IncrementSpec([(1, 1, 1), (1, 2, 1)]))
    assert e.coeffs.tolist() == [1.0, -1.0, -1.0, 1.0]


def test_polynomial_basic_invariants():
    spec = IncrementSpec([(1, 3, 2), (2, 2, 1)])
    e = increment_polynomial(spec)
    assert e.coeffs[0] == 1.0
    assert e.degree == spec.n_gamma == 3 * 2 + 2 * 2
    assert abs(e.coeffs.sum()) < 1e-12


def test_inverse_series_families():
    ones = dmu_coefficients(IncrementSpec([(1, 1, 1)]), 6)
    assert ones.coeffs.tolist() == [1.0] * 7
    alt = dmu_coefficients(IncrementSpec([(2, 1, 1)]), 6)
    assert alt.coeffs.tolist() == [1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]
    ramp = dmu_coefficients(IncrementSpec([(1, 1, 2)]), 5)
    assert ramp.coeffs.tolist() == [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.tuples(
            st.integers(min_value=1, max_value=3),
            st.integers(min_value=1, max_value=4),
            st.integers(min_value=0, max_value=3),
        ),
        min_size=1,
        max_size=3,
    )
)
def test_series_inverts_polynomial(patterns):
    if all(r == 0 for (_, _, r) in patterns):
        patterns = patterns[:1]
        patterns[0] = (patterns[0][0], patterns[0][1], 1)
    spec = IncrementSpec(patterns)
    e = increment_polynomial(spec)
    n = spec.n_gamma + 8
    d = dmu_coefficients(spec, n)
    conv = np.convolve(e.coeffs, d.coeffs)[: n + 1]
    expect = np.zeros(n + 1)
    expect[0] = 1.0
    assert np.max(np.abs(conv - expect)) < 1e-9


@pytest.mark.parametrize("d", [-0.3, 0.3, 1.0, 2.5])
@pytest.mark.parametrize("u", [1.0, 0.30901699437494745, -1.0, 0.0])
def test_gegenbauer_matches_closed_form(d, u):
    got = gegenbauer_coeffs(d, u, 12).coeffs
    for n in range(13):
        expect = gegenbauer_closed_form(d, u, n)
        assert got[n] == pytest.approx(expect, rel=1e-9, abs=1e-9)


@pytest.mark.parametrize("s,order", [(1, 0.3), (2, 0.25), (3, -0.2), (4, 0.45)])
def test_fractional_expansion_matches_binomial_series(s, order):
    spec = IncrementSpec([(1, s, 0, order)])
    n = 40
    direct = fractional_expansion(spec, "minus", n)
    assert np.allclose(direct.coeffs, binomial_series(order, s, n), atol=1e-10)
    inverse = fractional_expansion(spec, "plus", n)
    assert np.allclose(inverse.coeffs, binomial_series(-order, s, n), atol=1e-10)


def test_fractional_plus_minus_invert():
    spec = IncrementSpec([(1, 1, 0, 0.2), (1, 2, 0, 0.25)])
    n = 64
    gp = fractional_expansion(spec, "plus", n)
    gm = fractional_expansion(spec, "minus", n)
    conv = np.convolve(gp.coeffs, gm.coeffs)[: n + 1]
    expect = np.zeros(n + 1)
    expect[0] = 1.0
    assert np.max(np.abs(conv - expect)) < 1e-12


def test_memory_gate_rejects_large_aggregate():
    with pytest.raises(ValueError):
        IncrementSpec([(1, 1, 0, 0.3), (1, 2, 0, 0.25)])


def test_fractional_requires_unit_step():
    with pytest.raises(ValueError):
        IncrementSpec([(2, 2, 0, 0.3)])


def test_fractional_seasons_must_increase():
    with pytest.raises(ValueError):
        IncrementSpec([(1, 3, 0, 0.1), (1, 2, 0, 0.1)])


def test_negative_or_zero_step_rejected():
    with pytest.raises(ValueError):
        IncrementSpec([(0, 1, 1)])
    with pytest.raises(ValueError):
        IncrementSpec([(-1, 1, 1)])


def test_apply_increment_matches_brute_force():
    rng = np.random.default_rng(7)
    spec = IncrementSpec([(1, 2, 1), (2, 1, 1)])
    e = increment_polynomial(spec)
    x = rng.standard_normal(40)
    got = apply_increment(x, spec)
    assert np.allclose(got, brute_apply(e.coeffs, x), atol=1e-12)
    xm = rng.standard_normal((40, 3))
    gotm = apply_increment(xm, spec)
    assert np.allclose(gotm, brute_apply(e.coeffs, xm), atol=1e-12)


def test_apply_increment_rejects_short_series():
    spec = IncrementSpec([(1, 4, 2)])
    with pytest.raises(ValueError):
        apply_increment(np.zeros(spec.n_gamma), spec)


def test_transfer_consistency_on_grid():
    spec = IncrementSpec([(1, 1, 1), (1, 4, 1)])
    e = increment_polynomial(spec)
    lam = -np.pi + 2 * np.pi * np.arange(512) / 512
    chi = chi_transfer(spec, lam)
    direct = sum(c * np.exp(-1j * lam * k) for k, c in enumerate(e.coeffs))
    assert np.max(np.abs(chi - direct)) < 1e-12


def test_beta_vanishes_at_seasonal_frequencies():
    spec = IncrementSpec([(1, 2, 1)])
    vals = beta_transfer(spec, np.array([0.0, np.pi, -np.pi]))
    assert np.max(np.abs(vals)) < 1e-12


def test_kernel_ratio_fill_at_origin():
    spec = IncrementSpec([(1, 1, 1)])
    val = kernel_ratio(spec, np.array([0.0]))[0]
    assert val == pytest.approx(1.0, abs=1e-9)


def test_kernel_ratio_fill_interior_limit():
    # chi/beta for a step-1 season-2 pattern at pi: both factors vanish and
    # the two-sided limit is -1/pi^2.
    spec = IncrementSpec([(1, 2, 1)])
    val = kernel_ratio(spec, np.array([np.pi]))[0]
    assert val == pytest.approx(-1.0 / np.pi**2, rel=1e-5)


def test_kernel_ratio_zero_without_fill_for_big_steps():
    # step 2, season 1: chi vanishes at pi but beta does not, so the ratio is
    # a genuine zero there and no fill may hide it.
    spec = IncrementSpec([(2, 1, 1)])
    val = kernel_ratio(spec, np.array([np.pi]))[0]
    assert abs(val) < 1e-12


def test_with_steps_and_properties():
    spec = IncrementSpec([(1, 2, 1), (3, 1, 2)])
    assert spec.max_step == 3
    assert not spec.has_long_memory
    flat = spec.with_steps([1, 1])
    assert flat.max_step == 1
    assert [p.s for p in flat.patterns] == [2, 1]
    assert flat.n_gamma == 2 * 1 + 1 * 2
