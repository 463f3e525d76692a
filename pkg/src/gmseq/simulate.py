"""Synthetic paths with seasonal long-memory increments, plus the dense
time-domain projection oracle used to cross-check the spectral solvers.

Generation follows the canonical moving-average order: unit white noise is
filtered through a one-sided factor of the innovation density to produce
the differenced sequence, and the original sequence is rebuilt by
inverting the differencing operator.  Integer orders invert by an exact
recursion; fractional orders filter through the truncated inverse-series
expansion, so their paths carry a documented truncation tail bias.  The
moving-average stage emits only fully-formed samples, and a burn-in prefix
of the rebuilt path is discarded so the zero initial seed is forgotten.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import (
    ma_filter_kernel,
    rebuild_from_increments_kernel,
    scalar_filter_kernel,
)
from .errors import ConfigError, NumericError
from .factorize import canonical_factorize
from .forecast import FunctionalSpec
from .increments import (
    IncrementSpec,
    chi_transfer,
    fractional_expansion,
    increment_polynomial,
)
from .operators import WeightVector, b_and_v_weights
from .spectra import (
    DensityModel,
    SpectralDensityGrid,
    eval_density,
    fourier_coeffs,
    increment_spectrum_from_density,
)

_FRACTIONAL_WINDOW = 2048
_FACTOR_ORDER = 64
_GEN_GRID = 1024
_MAX_DENSE = 4000
_GRAM_FLOOR = 1e-10


@dataclass(frozen=True)
class SimulationConfig:
    """Recipe for one synthetic path.

    innovation is the ordinary spectral density of the differenced
    sequence; noise, when present, drives an independent additive path for
    the observation model.  burn_in must be at least ten times the longest
    filter window; leave it None for that default.  The only initial-values
    policy is "zeros": the rebuild recursion starts from zero pre-samples
    and the burn-in discard hides them.
    """

    spec: IncrementSpec
    innovation: DensityModel
    length: int
    burn_in: int | None = None
    seed: int | None = None
    noise: DensityModel | None = None
    initial_values: str = "zeros"

    def __post_init__(self):
        if self.length < 1:
            raise ConfigError("length must be >= 1")
        if self.initial_values != "zeros":
            raise ConfigError(
                f"unknown initial-values policy {self.initial_values!r}"
            )
        T = self.spec.period
        if self.innovation.dim != T:
            raise ConfigError(
                f"innovation dimension {self.innovation.dim} does not match "
                f"the lifted period {T}"
            )
        if self.noise is not None and self.noise.dim != T:
            raise ConfigError(
                f"noise dimension {self.noise.dim} does not match the lifted "
                f"period {T}"
            )
        if self.burn_in is not None and self.burn_in < 10 * self.window():
            raise ConfigError(
                f"burn-in {self.burn_in} is below ten filter windows "
                f"({10 * self.window()})"
            )

    def window(self) -> int:
        """Longest truncation window among the generation filters."""
        w = max(_FACTOR_ORDER, self.spec.n_gamma, 1)
        if not self.spec.is_integer:
            w = max(w, _FRACTIONAL_WINDOW)
        return w

    def effective_burn_in(self) -> int:
        if self.burn_in is not None:
            return self.burn_in
        return 10 * self.window() + self.spec.n_gamma


def _real_factor(model: DensityModel, label: str) -> np.ndarray:
    """One-sided factor coefficients of a density model as a real array;
    a zero density factors to a zero filter."""
    grid = eval_density(model, _GEN_GRID, label=label)
    T = grid.dim
    peak = float(np.max(np.abs(grid.values)))
    if peak == 0.0:
        return np.zeros((1, T, T))
    th = canonical_factorize(grid, n_coeffs=_FACTOR_ORDER).coeffs
    if float(np.max(np.abs(th.imag))) > 1e-8 * float(np.max(np.abs(th))):
        raise NumericError(
            "density factor is not real; only real-valued paths are supported"
        )
    return np.ascontiguousarray(th.real)


def _split_spec(spec: IncrementSpec) -> tuple[IncrementSpec | None, IncrementSpec | None]:
    ints = [(p.mu, p.s, p.r_int, 0.0) for p in spec.patterns if p.r_int > 0]
    fracs = [(p.mu, p.s, 0, p.d_frac) for p in spec.patterns if p.d_frac != 0.0]
    int_spec = IncrementSpec(ints, period=spec.period) if ints else None
    frac_spec = IncrementSpec(fracs, period=spec.period) if fracs else None
    return int_spec, frac_spec


def _rebuild_path(increments: np.ndarray, spec: IncrementSpec) -> np.ndarray:
    """Invert the differencing operator on a (L, T) increment block."""
    int_spec, frac_spec = _split_spec(spec)
    y = increments
    if frac_spec is not None:
        ginv = fractional_expansion(frac_spec, "plus", _FRACTIONAL_WINDOW).coeffs
        pad = np.vstack([np.zeros((ginv.size - 1, y.shape[1])), y])
        y = scalar_filter_kernel(np.ascontiguousarray(pad), ginv)
    if int_spec is not None:
        e = increment_polynomial(int_spec).coeffs
        y = rebuild_from_increments_kernel(np.ascontiguousarray(y), e)
    return y


def generate_gm_sequence(cfg: SimulationConfig) -> tuple[np.ndarray, np.ndarray]:
    """Simulate one path; returns (sequence, increments) after burn-in.

    Both arrays have shape (length,) when the lifted period is one and
    (length, T) otherwise, oldest sample first.
    """
    T = cfg.spec.period
    rng = np.random.default_rng(cfg.seed)
    theta = _real_factor(cfg.innovation, "f")
    total = cfg.effective_burn_in() + cfg.length
    eps = rng.standard_normal((total + theta.shape[0] - 1, T))
    increments = ma_filter_kernel(np.ascontiguousarray(eps), theta)
    xi = _rebuild_path(increments, cfg.spec)
    xi = xi[-cfg.length :]
    increments = increments[-cfg.length :]
    if T == 1:
        return xi[:, 0].copy(), increments[:, 0].copy()
    return xi.copy(), increments.copy()


def add_noise(xi, noise: DensityModel | None, seed: int | None = None) -> np.ndarray:
    """Observation path: the sequence plus an independent stationary path
    drawn from the noise density.  Returns a copy when the noise is absent
    or identically zero."""
    arr = np.asarray(xi, dtype=float)
    flat = arr.ndim == 1
    block = arr[:, None] if flat else arr
    if noise is None:
        return arr.copy()
    if noise.dim != block.shape[1]:
        raise ConfigError(
            f"noise dimension {noise.dim} does not match series dimension "
            f"{block.shape[1]}"
        )
    theta = _real_factor(noise, "g")
    if float(np.max(np.abs(theta))) == 0.0:
        return arr.copy()
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((block.shape[0] + theta.shape[0] - 1, block.shape[1]))
    eta = ma_filter_kernel(np.ascontiguousarray(eps), theta)
    out = block + eta
    return out[:, 0].copy() if flat else out


def brute_force_projection(
    f: SpectralDensityGrid,
    g: SpectralDensityGrid,
    spec: IncrementSpec,
    fn: FunctionalSpec,
    history: int,
) -> tuple[WeightVector, float]:
    """Dense time-domain projection of a functional onto observed increments.

    The functional's error is rewritten through the inverse-kernel weights b
    and the boundary weights v, which makes the target and the observed
    increments jointly stationary; their exact second moments are read off
    grid quadrature of the densities.  The dense normal equations over the
    last `history` observed increments are then solved directly, with no
    operator or factorization machinery involved.  Returns the taps
    (indexed -history..-1, acting on differenced observations) and the
    projection error.
    """
    if fn.kind == "infinite":
        raise ValueError("the dense oracle handles finite functionals only")
    if history < 1:
        raise ValueError("history must be >= 1")
    T = f.dim
    L = history
    if L * T > _MAX_DENSE:
        raise ValueError(
            f"dense solve of size {L * T} exceeds the guard {_MAX_DENSE}"
        )
    a = fn.weights
    if a.dim != T:
        raise ValueError("functional dimension does not match the density")
    n = spec.n_gamma
    n_top = a.entries.shape[0] - 1
    b, v = b_and_v_weights(a, spec, n_top + n)
    b_ent = b.entries[: n_top + 1]
    e = increment_polynomial(spec).coeffs

    lam = f.frequencies
    chi2 = np.abs(chi_transfer(spec, lam)) ** 2
    f_inc = increment_spectrum_from_density(f, spec).values
    q_obs = f_inc + chi2[:, None, None] * g.values

    span = L + n_top + n + 1
    fc_obs = fourier_coeffs(q_obs, -span, span)
    fc_inc = fourier_coeffs(f_inc, -span, span)
    fc_g = fourier_coeffs(g.values, -span, span)

    def cov(fc: np.ndarray, j: int) -> np.ndarray:
        # E[y(m + j) y(m)^H] for a density's coefficient table
        return fc[span - j]

    # Gram of the observed increments at times -L..-1
    gram = np.zeros((L, T, L, T), dtype=complex)
    for i in range(L):
        for j in range(L):
            gram[i, :, j, :] = cov(fc_obs, i - j)
    gram_mat = gram.reshape(L * T, L * T)
    gram_mat = 0.5 * (gram_mat + np.conj(gram_mat.T))
    eigs = np.linalg.eigvalsh(gram_mat)
    floor = float(eigs[0])
    if floor <= _GRAM_FLOOR * max(float(eigs[-1]), 1e-30):
        raise NumericError(
            f"observation Gram matrix is singular (eigenvalue floor "
            f"{floor:.3e}); the projection is not unique"
        )

    # cross moments of the target against each observation
    cross = np.zeros((L, T), dtype=complex)
    times = np.arange(-L, 0)
    for j, tj in enumerate(times):
        acc = np.zeros(T, dtype=complex)
        for m in range(n_top + 1):
            acc += b_ent[m] @ cov(fc_inc, m - tj)
        for k in range(-n, 0):
            noise_cov = sum(e[l] * cov(fc_g, k - tj + l) for l in range(n + 1))
            acc += v.at(k) @ noise_cov
        cross[j] = acc

    var_h = 0.0j
    for m in range(n_top + 1):
        for mp in range(n_top + 1):
            var_h += b_ent[m] @ cov(fc_inc, m - mp) @ np.conj(b_ent[mp])
    for k in range(-n, 0):
        for kp in range(-n, 0):
            var_h += v.at(k) @ cov(fc_g, k - kp) @ np.conj(v.at(kp))

    taps = np.conj(np.linalg.solve(gram_mat, np.conj(cross.ravel())))
    mse = float(np.real(var_h - taps @ np.conj(cross.ravel())))
    return WeightVector(taps.reshape(L, T), start=-L), max(mse, 0.0)
