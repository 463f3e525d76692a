"""Robust linear forecasting of noisy sequences with stationary increments.

The solver turns a linear functional of future values into a spectral
characteristic supported on the observable past, together with boundary
weights that absorb the non-stationary initial values.  Two routes exist:
the kernel route solves the truncated operator system directly, the
factorized route assembles the same objects from a one-sided factor of the
weighted observation density and never inverts a matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericError
from .factorize import (
    FactorizationResult,
    _fill_masked,
    factorize_increment_weighted,
    invert_factor,
)
from .increments import IncrementSpec, increment_polynomial, kernel_ratio
from .operators import (
    WeightVector,
    a_mu_weights,
    b_and_v_weights,
    build_PTQ,
    inner_product,
    solve_c,
)
from .spectra import (
    SpectralDensityGrid,
    fourier_coeffs,
    grid_frequencies,
    minimality_check,
    noisy_density,
    trig_synthesis,
)

_SUBSPACE_TOL = 1e-4


@dataclass(frozen=True)
class FunctionalSpec:
    """Linear functional of the unobserved sequence at indices >= 0.

    kind is "infinite" (weights decay and are truncated at their support),
    "finite" (weights are exactly the given entries), or "single" (one unit
    weight).  weights always start at index 0.  Infinite functionals must
    pass the numeric summability checks: absolute summability and a decaying
    linearly-weighted square sum at the truncation point.
    """

    kind: str
    weights: WeightVector

    def __post_init__(self):
        if self.kind not in ("infinite", "finite", "single"):
            raise ValueError(f"unknown functional kind {self.kind!r}")
        if self.weights.start != 0:
            raise ValueError("functional weights must start at index 0")
        if self.kind == "single":
            nz = np.nonzero(np.max(np.abs(self.weights.entries), axis=1))[0]
            if nz.size != 1:
                raise ValueError("single functionals have exactly one active index")

    @classmethod
    def finite(cls, entries) -> "FunctionalSpec":
        return cls(kind="finite", weights=WeightVector(entries))

    @classmethod
    def infinite(cls, entries, tail_tol: float = 1e-8) -> "FunctionalSpec":
        w = WeightVector(entries)
        norms = np.linalg.norm(np.atleast_2d(w.entries), axis=1)
        if norms.size:
            head = float(np.max(norms))
            tail = float(norms[-1])
            weighted_tail = float(norms.size * norms[-1] ** 2)
            if head > 0 and (
                tail > tail_tol * head or weighted_tail > tail_tol * head**2
            ):
                raise ValueError(
                    "infinite functionals need summable weights: tail "
                    f"{tail:.2e} (weighted {weighted_tail:.2e}) vs head "
                    f"{head:.2e} at the truncation point"
                )
        return cls(kind="infinite", weights=w)

    @classmethod
    def single(cls, index: int, dim: int = 1, component: int = 0) -> "FunctionalSpec":
        if index < 0:
            raise ValueError("single functional index must be >= 0")
        entries = np.zeros((index + 1, dim), dtype=complex)
        entries[index, component] = 1.0
        return cls(kind="single", weights=WeightVector(entries))


@dataclass(frozen=True)
class ForecastSolution:
    """Solved forecast problem.

    c_mu: correction weights from the operator system (indexed from 0).
    h_samples: spectral characteristic (transposed rows) on the grid, (M, T).
    filter_weights: past filter taps s(k), k <= -1, acting on the observed
    increments.
    v_weights: boundary weights on -n_gamma..-1, acting on raw observations.
    mse: mean-square forecast error.
    diagnostics: route, conditioning, subspace residual, warnings.
    """

    c_mu: WeightVector
    h_samples: np.ndarray
    filter_weights: WeightVector
    v_weights: WeightVector
    mse: float
    diagnostics: dict


def _transfer_rows(entries: np.ndarray, grid_size: int) -> np.ndarray:
    """Rows of sum_k x(k)^T e^{i*l*k} on the grid, shape (M, T)."""
    return trig_synthesis(entries, 0, grid_size)


def _w_rows_from_h(h_rows: np.ndarray, spec: IncrementSpec) -> np.ndarray:
    """Divide the characteristic rows by the kernel ratio, filling the
    isolated kernel zeros from their neighbors."""
    M = h_rows.shape[0]
    ratio = kernel_ratio(spec, grid_frequencies(M))
    singular = np.abs(ratio) ** 2 < 1e-20
    with np.errstate(divide="ignore", invalid="ignore"):
        W = h_rows / np.where(singular, 1.0, ratio)[:, None]
    if np.any(singular):
        W = _fill_masked(W, singular)
    return W


def _subspace_residual(w_rows: np.ndarray, n_trunc: int) -> float:
    """Relative energy of the causal (k >= 0) part of a past-filter symbol."""
    M = w_rows.shape[0]
    causal = fourier_coeffs(w_rows[:, :, None], 0, min(n_trunc, M // 4 - 1))[:, :, 0]
    total = float(np.mean(np.abs(w_rows) ** 2))
    return float(np.sum(np.abs(causal) ** 2)) / max(total, 1e-300)


def _clip_mse(value: complex) -> float:
    mse = float(np.real(value))
    if mse < -1e-9:
        raise NumericError(f"mean-square error came out negative ({mse:.3e})")
    return max(mse, 0.0)


def _solve_system(
    a: WeightVector,
    f: SpectralDensityGrid,
    g: SpectralDensityGrid,
    spec: IncrementSpec,
    n_trunc: int,
    n_filter: int | None,
    check_stability: bool,
    check_minimality: bool = True,
) -> ForecastSolution:
    dim = f.dim
    if a.dim != dim:
        raise ValueError("functional dimension does not match densities")
    n_a = a.entries.shape[0] - 1
    n = spec.n_gamma
    if n_trunc < n_a + n:
        raise ValueError(
            f"truncation {n_trunc} too small for functional support {n_a} "
            f"plus increment degree {n}"
        )
    M = f.grid_size
    if n_filter is None:
        n_filter = n_trunc
    if check_minimality:
        mres = minimality_check(f, g, spec)
        if not mres.passed:
            raise NumericError(
                "minimality condition fails; the forecast problem is "
                f"degenerate ({mres.detail})"
            )

    P, T_, Q = build_PTQ(f, g, spec, n_trunc)
    amu = a_mu_weights(a, spec)
    b, v = b_and_v_weights(a, spec, n_trunc)
    a_pad = a.padded(0, n_trunc + 1)
    rhs = WeightVector(b.entries - T_.apply(amu.padded(0, n_trunc + 1)))
    c, diag = solve_c(P, rhs)

    lam = f.frequencies
    ratio = kernel_ratio(spec, lam)
    mag = np.abs(ratio) ** 2
    singular = mag < 1e-20
    with np.errstate(divide="ignore"):
        inv_w = np.where(singular, 0.0, 1.0 / np.maximum(mag, 1e-300))
        inv_ratio_bar = np.where(
            singular, 0.0, np.conj(1.0 / np.where(singular, 1.0, ratio))
        )

    p = noisy_density(f, g, spec)
    p_inv = np.linalg.inv(p.values)
    a_grid = _transfer_rows(amu.entries, M)
    b_grid = _transfer_rows(b.entries, M)
    c_grid = _transfer_rows(c.entries, M)

    inner = np.einsum("mt,mts->ms", a_grid, g.values) + c_grid
    h_rows = b_grid * ratio[:, None] - inv_ratio_bar[:, None] * np.einsum(
        "mt,mts->ms", inner, p_inv
    )
    W = b_grid - inv_w[:, None] * np.einsum("mt,mts->ms", inner, p_inv)
    filled = bool(np.any(singular))
    if filled:
        h_rows = _fill_masked(h_rows, singular)
        W = _fill_masked(W, singular)

    sub_resid = _subspace_residual(W, n_trunc)
    s_fc = fourier_coeffs(W[:, :, None], -n_filter, -1)[:, :, 0]
    filter_weights = WeightVector(s_fc, start=-n_filter)

    qa = Q.apply(a_pad)
    mse = _clip_mse(
        inner_product(rhs, c) + inner_product(WeightVector(qa), WeightVector(a_pad))
    )

    diagnostics = dict(diag)
    diagnostics["route"] = "kernel"
    diagnostics["subspace_residual"] = sub_resid
    diagnostics["subspace_ok"] = bool(sub_resid <= _SUBSPACE_TOL)
    if filled:
        diagnostics["filled_kernel_zeros"] = True
    if check_stability:
        bigger = _solve_system(a, f, g, spec, 2 * n_trunc, None, False, False)
        overlap = min(len(c.entries), len(bigger.c_mu.entries))
        dev = float(
            np.max(
                np.abs(c.entries[: overlap // 2] - bigger.c_mu.entries[: overlap // 2])
            )
        )
        scale = max(float(np.max(np.abs(c.entries))), 1e-30)
        diagnostics["stable_at_2n"] = bool(dev <= 1e-4 * scale)
        diagnostics["stability_deviation"] = dev

    return ForecastSolution(
        c_mu=c,
        h_samples=h_rows,
        filter_weights=filter_weights,
        v_weights=v,
        mse=mse,
        diagnostics=diagnostics,
    )


def spectral_characteristic(
    f: SpectralDensityGrid,
    g: SpectralDensityGrid,
    spec: IncrementSpec,
    fn: FunctionalSpec,
    n_trunc: int = 512,
    n_filter: int | None = None,
    check_stability: bool = False,
) -> ForecastSolution:
    """Solve the forecast problem for any functional kind.

    Infinite functionals must carry decayed weights at their truncation
    point; the finite machinery then applies verbatim.  Requires the
    minimality condition (otherwise the error functional is degenerate).
    """
    return _solve_system(fn.weights, f, g, spec, n_trunc, n_filter, check_stability)


def spectral_characteristic_finite(
    f: SpectralDensityGrid,
    g: SpectralDensityGrid,
    spec: IncrementSpec,
    fn: FunctionalSpec,
    n_trunc: int = 512,
    n_filter: int | None = None,
) -> ForecastSolution:
    """Forecast a functional with finitely many active weights."""
    if fn.kind == "infinite":
        raise ValueError("use spectral_characteristic for infinite functionals")
    return _solve_system(fn.weights, f, g, spec, n_trunc, n_filter, False)


def single_value_forecast(
    f: SpectralDensityGrid,
    g: SpectralDensityGrid,
    spec: IncrementSpec,
    index: int,
    component: int = 0,
    n_trunc: int = 512,
) -> ForecastSolution:
    """Forecast one future value: the unit functional at the given index
    (component is 0-based)."""
    fn = FunctionalSpec.single(index, dim=f.dim, component=component)
    return spectral_characteristic_finite(f, g, spec, fn, n_trunc)


def extract_filter_weights(
    solution: ForecastSolution,
    spec: IncrementSpec | None = None,
    k_max: int | None = None,
) -> WeightVector:
    """Past filter taps s(k), k = -k_max..-1, of a solved forecast.

    With spec and k_max the taps are recomputed from the stored
    characteristic (coefficients of h divided by the kernel ratio, isolated
    zeros filled); otherwise the solve-time taps are returned.  Refuses when
    the characteristic leaks out of the past-observation subspace, which
    signals a too-coarse upstream truncation.
    """
    resid = solution.diagnostics.get("subspace_residual", 0.0)
    if resid > _SUBSPACE_TOL:
        raise NumericError(
            f"subspace residual {resid:.3e} too large; the characteristic is "
            "not representable by past taps (increase the truncation order)"
        )
    if spec is None or k_max is None:
        s = solution.filter_weights
        if k_max is not None and k_max < s.entries.shape[0]:
            return WeightVector(s.entries[-k_max:], start=-k_max)
        return s
    W = _w_rows_from_h(solution.h_samples, spec)
    s_fc = fourier_coeffs(W[:, :, None], -k_max, -1)[:, :, 0]
    return WeightVector(s_fc, start=-k_max)


def apply_forecast(
    observations: np.ndarray,
    solution: ForecastSolution,
    spec: IncrementSpec,
    k_max: int | None = None,
) -> float | complex:
    """Evaluate the forecast on observed past values.

    observations holds the observed sequence at -L..-1 in time order (most
    recent last), shape (L,) or (L, T).  The estimate applies the filter
    taps to the differenced observations and subtracts the boundary weights:
    sum_{k<=-1} s(k)^T (diff obs)(k) - sum_{k=-n}^{-1} v(k)^T obs(k).
    When k_max is given the history must cover it; otherwise the taps are
    truncated to the available history.
    """
    s = solution.filter_weights
    zeta = np.asarray(observations, dtype=float)
    if zeta.ndim == 1:
        zeta = zeta[:, None]
    L = zeta.shape[0]
    n = spec.n_gamma
    n_taps = s.entries.shape[0]
    if k_max is not None:
        if L < k_max + n:
            raise DataError(
                f"insufficient history: need {k_max + n} observations for "
                f"{k_max} taps, got {L}"
            )
        n_use = min(k_max, n_taps)
    else:
        n_use = min(n_taps, L - n)
    if n_use < 0:
        raise DataError(f"need more than {n} past observations, got {L}")
    diffed = np.stack(
        [
            np.convolve(zeta[:, c], increment_polynomial(spec).coeffs, mode="valid")
            for c in range(zeta.shape[1])
        ],
        axis=1,
    )
    # diffed[j] is the differenced value at time j + n - L (last entry -> -1)
    acc = 0.0 + 0.0j
    for k in range(-1, -n_use - 1, -1):
        acc += s.at(k) @ diffed[k + L - n]
    v = solution.v_weights
    for k in range(v.start, 0):
        acc -= v.at(k) @ zeta[k + L]
    return complex(acc) if abs(acc.imag) > 1e-10 * max(abs(acc), 1.0) else float(
        acc.real
    )


def interleave(series: np.ndarray, period: int) -> np.ndarray:
    """Block a scalar stream into the vector-of-phases form:
    out[m, p] = series[m*period + p].  The last row is padded with NaN
    markers when the length is not a multiple of the period."""
    arr = np.asarray(series, dtype=float).ravel()
    if period < 1:
        raise ValueError("period must be >= 1")
    rows = -(-arr.size // period)
    out = np.full((rows, period), np.nan)
    out.reshape(-1)[: arr.size] = arr
    return out


def deinterleave(series: np.ndarray) -> np.ndarray:
    """Flatten a (L, T) vector-of-phases series back into one scalar stream:
    out[m*T + p] = series[m, p].  Trailing NaN markers are dropped."""
    arr = np.asarray(series, dtype=float)
    if arr.ndim != 2:
        raise ValueError("deinterleave expects a (L, T) series")
    flat = arr.reshape(-1)
    keep = flat.size
    while keep > 0 and np.isnan(flat[keep - 1]):
        keep -= 1
    return flat[:keep]


def lift_functional(weights: np.ndarray, period: int) -> FunctionalSpec:
    """Rewrite scalar-stream functional weights as phase-vector weights:
    a[m, p] = w[m*period + p], zero-filled to whole blocks."""
    arr = np.asarray(weights, dtype=complex).ravel()
    if period < 1:
        raise ValueError("period must be >= 1")
    rows = max(1, -(-arr.size // period))
    out = np.zeros((rows, period), dtype=complex)
    out.reshape(-1)[: arr.size] = arr
    return FunctionalSpec.finite(out)


def _theta_transpose_contract(theta: np.ndarray, x: np.ndarray, m: int) -> np.ndarray:
    """(Theta^T x)_m = sum_t theta(m+t)^T x(t)."""
    K = theta.shape[0] - 1
    dim = theta.shape[1]
    acc = np.zeros(dim, dtype=complex)
    for t in range(0, min(K - m, x.shape[0] - 1) + 1):
        if m + t < 0:
            continue
        acc += theta[m + t].T @ x[t]
    return acc


@dataclass(frozen=True)
class _FactorPieces:
    """Coefficient sequences of the factorized route, shared with the
    saddle-point verifiers."""

    factor: FactorizationResult
    theta: np.ndarray
    psi: np.ndarray
    amu: WeightVector
    b: WeightVector
    v: WeightVector
    w_seq: np.ndarray
    z_seq: np.ndarray
    r_seq: np.ndarray
    bracket: np.ndarray


def _factor_pieces(
    f: SpectralDensityGrid,
    g: SpectralDensityGrid,
    spec: IncrementSpec,
    fn: FunctionalSpec,
    n_coeffs: int = 96,
    n_trunc: int = 512,
    factor: FactorizationResult | None = None,
) -> _FactorPieces:
    a = fn.weights
    dim = f.dim
    if a.dim != dim:
        raise ValueError("functional dimension does not match densities")
    n = spec.n_gamma
    n_a = a.entries.shape[0] - 1
    if n_trunc < n_a + n:
        raise ValueError(
            f"truncation {n_trunc} too small for functional support {n_a} "
            f"plus increment degree {n}"
        )
    M = f.grid_size

    if factor is None:
        factor = factorize_increment_weighted(f, g, spec, n_coeffs=n_coeffs)
    theta = factor.coeffs
    K = factor.order
    psi = invert_factor(theta, n_trunc + K)
    n_psi = psi.shape[0]

    amu = a_mu_weights(a, spec)
    b, v = b_and_v_weights(a, spec, n_trunc)
    bv = b.entries

    span = min(n_psi - 1 + n_trunc, M // 8 - 1)
    g_fc = fourier_coeffs(g, -span, span)

    # cross weights c_g(m) = sum_{k>=0} conj(g_fc(m+k)) a_mu(k);
    # support is m in [-(span + deg a_mu), span], zero outside
    n_amu = amu.entries.shape[0]
    lo = -(span + n_amu - 1)
    hi = span
    c_g = np.zeros((hi - lo + 1, dim), dtype=complex)
    for k in range(n_amu):
        block = np.einsum("mts,s->mt", np.conj(g_fc), amu.entries[k])
        c_g[n_amu - 1 - k : n_amu - 1 - k + 2 * span + 1] += block

    # bilateral noise filter zfull(k) = sum_l conj(psi(l)) c_g(l - k);
    # k >= 0 feeds the correction weights, k <= -1 the bracket cross terms
    ks = np.arange(-n_trunc, n_trunc + 1)
    zfull = np.zeros((2 * n_trunc + 1, dim), dtype=complex)
    for l in range(n_psi):
        args = l - ks
        valid = (args >= lo) & (args <= hi)
        if not np.any(valid):
            continue
        zfull[valid] += c_g[args[valid] - lo] @ np.conj(psi[l]).T
    w_seq = zfull[n_trunc::-1].copy()  # w(m) = zfull(-m), m = 0..n_trunc
    z_seq = zfull[n_trunc:].copy()  # z(m) = zfull(m),  m = 0..n_trunc

    # r(m) = sum_p theta(p)^T b(p + m), the factor applied to the tail
    r_seq = np.zeros((n_trunc + 1, dim), dtype=complex)
    for p in range(min(K, n_trunc) + 1):
        r_seq[: n_trunc + 1 - p] += bv[p:] @ theta[p]

    # bracket_m = (theta^T btilde)_m - w(m) for m >= 1
    bracket = -w_seq
    for m in range(1, min(K, n_trunc) + 1):
        bracket[m] += _theta_transpose_contract(theta, bv, m)
    bracket[0] = 0.0

    return _FactorPieces(
        factor=factor,
        theta=theta,
        psi=psi,
        amu=amu,
        b=b,
        v=v,
        w_seq=w_seq,
        z_seq=z_seq,
        r_seq=r_seq,
        bracket=bracket,
    )


def factorized_forecast(
    f: SpectralDensityGrid,
    g: SpectralDensityGrid,
    spec: IncrementSpec,
    fn: FunctionalSpec,
    n_coeffs: int = 96,
    n_trunc: int = 512,
    n_filter: int | None = None,
    factor: FactorizationResult | None = None,
) -> ForecastSolution:
    """Forecast through a one-sided factor of the weighted observation
    density, avoiding the operator solve entirely.

    Every object is a coefficient convolution against the factor theta or
    its inverse psi: a bracket sequence combines the functional tail with
    the noise cross terms, the characteristic is the bracket filtered
    through psi, and the correction weights come from a banded triangular
    product instead of a linear solve.
    """
    pieces = _factor_pieces(
        f, g, spec, fn, n_coeffs=n_coeffs, n_trunc=n_trunc, factor=factor
    )
    a = fn.weights
    dim = f.dim
    M = f.grid_size
    if n_filter is None:
        n_filter = n_trunc
    factor = pieces.factor
    theta = pieces.theta
    K = factor.order
    psi = pieces.psi
    n_psi = psi.shape[0]
    w_seq = pieces.w_seq
    z_seq = pieces.z_seq
    r_seq = pieces.r_seq
    bracket = pieces.bracket
    v = pieces.v

    lam = f.frequencies
    ratio = kernel_ratio(spec, lam)
    psi_grid = np.conj(trig_synthesis(np.conj(psi), 0, M))
    series = np.conj(trig_synthesis(np.conj(bracket[1:]), 1, M))
    w_rows = np.einsum("mt,mts->ms", series, psi_grid)
    h_rows = ratio[:, None] * w_rows

    sub_resid = _subspace_residual(w_rows, n_trunc)

    s_full = np.zeros((n_filter + 1, dim), dtype=complex)
    for j in range(min(n_psi, n_filter + 1)):
        hi_m = min(n_filter, j + n_trunc)
        if hi_m < j:
            continue
        s_full[j : hi_m + 1] += bracket[: hi_m - j + 1] @ psi[j]
    filter_weights = WeightVector(s_full[1:][::-1], start=-n_filter)

    # correction weights c(k) = sum_{l<=k} conj(theta(k-l)) (r - z)(l)
    rz = r_seq - z_seq
    c_entries = np.zeros((n_trunc + 1, dim), dtype=complex)
    for d in range(min(K, n_trunc) + 1):
        c_entries[d:] += rz[: n_trunc + 1 - d] @ np.conj(theta[d]).T
    c = WeightVector(c_entries)

    a_grid = _transfer_rows(a.entries, M)
    noise_term = np.mean(
        np.einsum("mt,mts,ms->m", a_grid, g.values, np.conj(a_grid))
    )
    # Parseval on the factored error: the functional tail contributes
    # |r|^2, the causal noise filter removes |w|^2, and the two mix only
    # through the anticausal branch z
    cross = (
        np.sum(np.abs(r_seq) ** 2)
        - np.sum(np.abs(w_seq[1:]) ** 2)
        - 2.0 * np.real(np.sum(r_seq * np.conj(z_seq)))
    )
    mse = _clip_mse(noise_term + cross)

    diagnostics = {
        "route": "factorized",
        "factorization_residual": factor.residual,
        "factorization_converged": factor.converged,
        "subspace_residual": sub_resid,
        "subspace_ok": bool(sub_resid <= _SUBSPACE_TOL),
    }

    return ForecastSolution(
        c_mu=c,
        h_samples=h_rows,
        filter_weights=filter_weights,
        v_weights=v,
        mse=mse,
        diagnostics=diagnostics,
    )
