"""Forecasting a sequence from observations of a cointegrated partner.

Two sequences with the same seasonal increment structure are cointegrated
when some nonzero multiple alpha of the target differs from the partner by
a stationary remainder.  Observing only the partner then carries the same
information as observing the scaled target through stationary noise, so
every solver here is the noise-model machinery evaluated at the effective
split: signal density alpha^2 f, noise density (p - alpha^2 f) / |beta|^2.
Results are rescaled back to the unscaled target (1/alpha on the linear
parts, 1/alpha^2 on the error).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .forecast import ForecastSolution, FunctionalSpec, _solve_system, factorized_forecast
from .increments import IncrementSpec, beta_transfer
from .operators import BlockOperator, WeightVector, build_PTQ
from .spectra import SpectralDensityGrid

_PSD_TOL = 1e-8
_ZERO_REL = 1e-10
_SLOPE_STATIONARY = 0.4
_LOWFREQ_STATIONARY = 0.4
_LOWFREQ_BAND = 0.05


@dataclass(frozen=True)
class CointegrationSpec:
    """Cointegrated pair: target density f, partner density p, scale alpha.

    alpha is the nonzero real with (partner - alpha * target) stationary.
    p - alpha^2 f must be Hermitian positive semidefinite on the grid; it
    is the remainder's density pushed through the seasonal kernel.
    """

    alpha: float
    f: SpectralDensityGrid
    p: SpectralDensityGrid

    def __post_init__(self):
        alpha = float(self.alpha)
        if alpha == 0.0 or not np.isfinite(alpha):
            raise ValueError("alpha must be a nonzero finite real")
        object.__setattr__(self, "alpha", alpha)
        if self.f.grid_size != self.p.grid_size or self.f.dim != self.p.dim:
            raise ValueError("f and p must share grid size and dimension")
        rem = self.remainder()
        scale = max(1.0, float(np.max(np.abs(self.p.values))))
        eigmin = float(np.min(np.linalg.eigvalsh(rem)))
        if eigmin < -_PSD_TOL * scale:
            raise ValueError(
                f"p - alpha^2 f has negative eigenvalue {eigmin:.3e}; "
                "the pair admits no stationary remainder"
            )

    def remainder(self) -> np.ndarray:
        """Samples of p - alpha^2 f (Hermitian by grid construction)."""
        return self.p.values - self.alpha**2 * self.f.values


def _interp_fill(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Replace masked samples by a cubic through the two nearest clean
    samples on each side (periodic); error is O(h^4) for smooth limits."""
    out = values.copy()
    M = values.shape[0]
    if M - int(np.sum(mask)) < 4:
        raise ValueError("too few clean samples to interpolate")
    for i in np.nonzero(mask)[0]:
        offs = []
        for direction in (-1, 1):
            dist, found = 0, 0
            while found < 2:
                dist += 1
                k = (i + direction * dist) % M
                if not mask[k]:
                    offs.append((direction * dist, k))
                    found += 1
        xs = np.array([o for o, _ in offs], dtype=float)
        ys = np.stack([values[k].ravel() for _, k in offs])
        coef = np.linalg.solve(np.vander(xs, 4), ys)
        filled = coef[3].reshape(values.shape[1:])
        filled = 0.5 * (filled + np.conj(filled.T))
        w, vecs = np.linalg.eigh(filled)
        filled = (vecs * np.maximum(w, 0.0)) @ np.conj(vecs.T)
        out[i] = filled
    return out


def remainder_noise_density(cs: CointegrationSpec, spec: IncrementSpec) -> SpectralDensityGrid:
    """Effective noise density (p - alpha^2 f) / |beta|^2 on the grid.

    Samples where the seasonal factor vanishes are 0/0 limits of the
    remainder model and are filled by local cubic interpolation.
    """
    lam = cs.p.frequencies
    b2 = np.abs(beta_transfer(spec, lam)) ** 2
    mask = b2 <= _ZERO_REL * float(np.max(b2))
    vals = np.zeros_like(cs.p.values)
    vals[~mask] = cs.remainder()[~mask] / b2[~mask, None, None]
    if np.any(mask):
        vals = _interp_fill(vals, mask)
    return SpectralDensityGrid(cs.p.grid_size, vals, "g")


def _effective_split(
    cs: CointegrationSpec, spec: IncrementSpec
) -> tuple[SpectralDensityGrid, SpectralDensityGrid]:
    g_star = remainder_noise_density(cs, spec)
    f_eff = SpectralDensityGrid(cs.f.grid_size, cs.alpha**2 * cs.f.values, "f")
    return f_eff, g_star


def coint_operators(
    cs: CointegrationSpec, spec: IncrementSpec, n_trunc: int
) -> tuple[BlockOperator, BlockOperator, BlockOperator]:
    """Finite sections of the pair's forecast operators.

    P has symbol |beta/chi|^2 [p^{-1}]^T, T has symbol
    |chi|^{-2} [(p - alpha^2 f) p^{-1}]^T, and Q has symbol
    |beta|^{-2} [f p^{-1} (p - alpha^2 f)]^T.  The first two coincide with
    the noise-model operators of the effective split, whose observation
    density reconstructs p sample by sample; the noise-model Q carries an
    extra alpha^2 that is divided out.
    """
    f_eff, g_star = _effective_split(cs, spec)
    P, T, Q = build_PTQ(f_eff, g_star, spec, n_trunc)
    return P, T, BlockOperator(Q.blocks / cs.alpha**2, "Q")


def _rescale_solution(sol: ForecastSolution, alpha: float) -> ForecastSolution:
    # the solved system estimates the functional of alpha * target
    inv = 1.0 / alpha
    diag = dict(sol.diagnostics)
    diag["route"] = "coint-" + str(diag.get("route", "kernel"))
    diag["alpha"] = alpha

    def scale(w: WeightVector) -> WeightVector:
        return WeightVector(w.entries * inv, start=w.start)

    return dataclasses.replace(
        sol,
        c_mu=scale(sol.c_mu),
        h_samples=sol.h_samples * inv,
        filter_weights=scale(sol.filter_weights),
        v_weights=scale(sol.v_weights),
        mse=sol.mse * inv * inv,
        diagnostics=diag,
    )


def coint_forecast(
    cs: CointegrationSpec,
    spec: IncrementSpec,
    fn: FunctionalSpec,
    n_trunc: int = 512,
    n_filter: int | None = None,
    check_stability: bool = False,
) -> ForecastSolution:
    """Forecast a functional of the target from partner observations.

    Kernel-operator route.  The returned characteristic, taps, and boundary
    weights act on the partner's history; the error is for the unscaled
    target functional.
    """
    f_eff, g_star = _effective_split(cs, spec)
    sol = _solve_system(fn.weights, f_eff, g_star, spec, n_trunc, n_filter, check_stability)
    return _rescale_solution(sol, cs.alpha)


def coint_factorized_forecast(
    cs: CointegrationSpec,
    spec: IncrementSpec,
    fn: FunctionalSpec,
    n_coeffs: int = 96,
    n_trunc: int = 512,
    n_filter: int | None = None,
) -> ForecastSolution:
    """Moving-average route of coint_forecast: canonical factorizations of
    the effective split instead of operator inversion."""
    f_eff, g_star = _effective_split(cs, spec)
    sol = factorized_forecast(f_eff, g_star, spec, fn, n_coeffs=n_coeffs,
                              n_trunc=n_trunc, n_filter=n_filter)
    return _rescale_solution(sol, cs.alpha)


@dataclass(frozen=True)
class StationarityReport:
    """Advisory screen of a candidate stationary remainder.

    variance_slope: log-log growth rate of prefix sample variances (near 0
    when stationary, near 1 when integrated).  low_frequency_share: fraction
    of periodogram mass in the lowest 5% of frequency bins.  stationary is
    the combined verdict; no formal unit-root test is performed.
    """

    variance_slope: float
    low_frequency_share: float
    stationary: bool
    n_samples: int


def check_cointegration(zeta, xi, alpha: float) -> StationarityReport:
    """Heuristic check that zeta - alpha * xi looks stationary."""
    if float(alpha) == 0.0:
        raise ValueError("alpha must be nonzero")
    z = np.asarray(zeta, dtype=float)
    x = np.asarray(xi, dtype=float)
    if z.shape != x.shape:
        raise DataError(
            f"series shapes differ: {z.shape} vs {x.shape}"
        )
    resid = (z - float(alpha) * x).reshape(z.shape[0], -1)
    L = resid.shape[0]
    if L < 32:
        raise DataError(f"need at least 32 samples, got {L}")

    lengths = sorted({L // 8, L // 4, L // 2, L} - {0})
    lengths = [n for n in lengths if n >= 8]
    prefix_var = np.array(
        [float(np.mean(np.var(resid[:n], axis=0))) for n in lengths]
    )
    total_var = prefix_var[-1]
    if total_var <= 1e-30:
        return StationarityReport(0.0, 0.0, True, L)
    slope = float(
        np.polyfit(np.log(lengths), np.log(np.maximum(prefix_var, 1e-300)), 1)[0]
    )

    centered = resid - np.mean(resid, axis=0)
    mass = np.sum(np.abs(np.fft.rfft(centered, axis=0)) ** 2, axis=1)[1:]
    cut = max(1, int(round(_LOWFREQ_BAND * mass.size)))
    share = float(np.sum(mass[:cut]) / np.sum(mass))

    stationary = slope <= _SLOPE_STATIONARY and share <= _LOWFREQ_STATIONARY
    return StationarityReport(slope, share, stationary, L)
