"""Spectral density models, grids, and quadrature.

Densities live on a uniform frequency grid lambda_m = -pi + 2*pi*m/M with M a
power of two.  Integrals (1/2pi) * int_{-pi}^{pi} are approximated by grid
means, and Fourier coefficients are read off a single FFT pass.

Two spectral conventions coexist.  The *structural* density carries the
1/|beta|^2 weight of the continuous-frequency model; the *ordinary* density is
what a sample periodogram of the differenced sequence estimates.  They differ
by the factor |chi/beta|^2 and the converters at the bottom translate between
them.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, NumericError
from .increments import IncrementSpec, fractional_expansion, kernel_ratio

DEFAULT_GRID = 4096
MIN_GRID = 64

_HERMITIAN_TOL = 1e-10
_PSD_TOL = -1e-10

_LABELS = ("f", "g", "p", "f_tilde")


def grid_frequencies(grid_size: int) -> np.ndarray:
    """Return the sample frequencies -pi + 2*pi*m/M for m = 0..M-1."""
    _check_grid_size(grid_size)
    return -np.pi + 2.0 * np.pi * np.arange(grid_size) / grid_size


def _check_grid_size(grid_size: int) -> None:
    if grid_size < MIN_GRID or grid_size & (grid_size - 1):
        raise ConfigError(
            f"grid size must be a power of two >= {MIN_GRID}, got {grid_size}"
        )


@dataclass(frozen=True)
class SpectralDensityGrid:
    """Matrix density sampled on the uniform grid.

    values has shape (M, T, T); each sample is validated Hermitian and
    positive semidefinite at construction and then symmetrized exactly.
    label records which role the density plays: signal ("f"), noise ("g"),
    observation ("p"), or pre-transform stationary density ("f_tilde").
    """

    grid_size: int
    values: np.ndarray
    label: str = "f"
    real_symmetric: bool = False

    def __post_init__(self):
        _check_grid_size(self.grid_size)
        if self.label not in _LABELS:
            raise ConfigError(f"unknown density label {self.label!r}")
        vals = np.asarray(self.values, dtype=complex)
        if vals.ndim == 1:
            vals = vals[:, None, None]
        if vals.ndim != 3 or vals.shape[0] != self.grid_size:
            raise ConfigError(
                f"values must have shape (M, T, T) with M={self.grid_size}, "
                f"got {vals.shape}"
            )
        if vals.shape[1] != vals.shape[2]:
            raise ConfigError("density samples must be square matrices")
        vals_h = np.conj(np.transpose(vals, (0, 2, 1)))
        scale = max(float(np.max(np.abs(vals))), 1.0)
        if np.max(np.abs(vals - vals_h)) > _HERMITIAN_TOL * scale:
            raise NumericError("density samples are not Hermitian")
        sym = 0.5 * (vals + vals_h)
        eigmin = float(np.min(np.linalg.eigvalsh(sym)))
        if eigmin < _PSD_TOL * scale:
            raise NumericError(
                f"density has a sample with negative eigenvalue {eigmin:.3e}"
            )
        if self.real_symmetric:
            mirror = sym[(self.grid_size - np.arange(self.grid_size)) % self.grid_size]
            if np.max(np.abs(mirror - np.transpose(sym, (0, 2, 1)))) > _HERMITIAN_TOL * scale:
                raise NumericError("density violates f(-l) = f(l)^T symmetry")
        object.__setattr__(self, "values", sym)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def frequencies(self) -> np.ndarray:
        return grid_frequencies(self.grid_size)

    def scalar_values(self) -> np.ndarray:
        if self.dim != 1:
            raise ValueError("scalar_values requires a 1x1 density")
        return self.values[:, 0, 0]

    def relabel(self, label: str) -> "SpectralDensityGrid":
        return dataclasses.replace(self, label=label)

    def trace(self) -> np.ndarray:
        return np.trace(self.values, axis1=1, axis2=2).real


def _matrix_from_flat(flat: Sequence[float], dim: int) -> np.ndarray:
    arr = np.asarray(flat, dtype=float)
    if arr.shape != (2 * dim * dim,):
        raise ConfigError(
            f"expected {2 * dim * dim} numbers for a {dim}x{dim} complex matrix, "
            f"got {arr.shape}"
        )
    cx = arr[0::2] + 1j * arr[1::2]
    return cx.reshape(dim, dim)


def _matrix_to_flat(mat: np.ndarray) -> list:
    flat = np.asarray(mat, dtype=complex).ravel()
    out = np.empty(2 * flat.size)
    out[0::2] = flat.real
    out[1::2] = flat.imag
    return out.tolist()


@dataclass(frozen=True)
class DensityModel:
    """Parametric density: constant matrix, rational form, or a sampled table.

    The rational kind is N(e^{-il}) N(e^{-il})^* / |c(e^{-il})|^2 with a
    matrix moving-average numerator N and a scalar polynomial denominator c,
    so it is Hermitian positive semidefinite by construction.
    """

    kind: str
    dim: int
    const: np.ndarray | None = None
    num_coeffs: np.ndarray | None = None
    den_coeffs: np.ndarray | None = None
    table: SpectralDensityGrid | None = None
    real_symmetric: bool = True

    def __post_init__(self):
        if self.kind not in ("constant", "rational", "tabulated"):
            raise ConfigError(f"unknown density kind {self.kind!r}")
        if self.dim < 1:
            raise ConfigError("density dimension must be >= 1")
        if self.kind == "constant":
            if self.const is None:
                raise ConfigError("constant density needs a matrix")
            mat = np.asarray(self.const, dtype=complex)
            if mat.shape != (self.dim, self.dim):
                raise ConfigError("constant matrix shape mismatch")
            if np.max(np.abs(mat - mat.conj().T)) > _HERMITIAN_TOL * max(
                1.0, float(np.max(np.abs(mat)))
            ):
                raise NumericError("constant density must be Hermitian")
            object.__setattr__(self, "const", mat)
        elif self.kind == "rational":
            if self.num_coeffs is None or self.den_coeffs is None:
                raise ConfigError("rational density needs numerator and denominator")
            num = np.asarray(self.num_coeffs, dtype=complex)
            if num.ndim != 3 or num.shape[1:] != (self.dim, self.dim):
                raise ConfigError(
                    "numerator must have shape (K+1, T, T), got " f"{num.shape}"
                )
            den = np.asarray(self.den_coeffs, dtype=complex).ravel()
            if den.size == 0 or abs(den[0]) == 0.0:
                raise ConfigError("denominator leading coefficient must be nonzero")
            object.__setattr__(self, "num_coeffs", num)
            object.__setattr__(self, "den_coeffs", den)
        else:
            if self.table is None:
                raise ConfigError("tabulated density needs a SpectralDensityGrid")
            if self.table.dim != self.dim:
                raise ConfigError("table dimension mismatch")

    @classmethod
    def constant(cls, matrix) -> "DensityModel":
        mat = np.atleast_2d(np.asarray(matrix, dtype=complex))
        real = bool(np.max(np.abs(mat.imag)) < 1e-14) if mat.size else True
        return cls(kind="constant", dim=mat.shape[0], const=mat, real_symmetric=real)

    @classmethod
    def rational(cls, num_coeffs, den_coeffs) -> "DensityModel":
        num = np.asarray(num_coeffs, dtype=complex)
        if num.ndim == 1:
            num = num[:, None, None]
        den = np.asarray(den_coeffs, dtype=complex)
        real = bool(
            np.max(np.abs(num.imag)) < 1e-14 and np.max(np.abs(den.imag)) < 1e-14
        )
        return cls(
            kind="rational",
            dim=num.shape[1],
            num_coeffs=num,
            den_coeffs=den_coeffs,
            real_symmetric=real,
        )

    @classmethod
    def tabulated(cls, table: SpectralDensityGrid) -> "DensityModel":
        return cls(kind="tabulated", dim=table.dim, table=table, real_symmetric=False)

    def to_dict(self) -> dict:
        if self.kind == "constant":
            return {
                "kind": "constant",
                "dim": self.dim,
                "const": _matrix_to_flat(self.const),
            }
        if self.kind == "rational":
            den = np.empty(2 * self.den_coeffs.size)
            den[0::2] = self.den_coeffs.real
            den[1::2] = self.den_coeffs.imag
            return {
                "kind": "rational",
                "dim": self.dim,
                "num_coeffs": [_matrix_to_flat(m) for m in self.num_coeffs],
                "den_coeffs": den.tolist(),
            }
        raise ConfigError("tabulated densities cannot be serialized to config")

    @classmethod
    def from_dict(cls, data: dict) -> "DensityModel":
        try:
            kind = data["kind"]
            dim = int(data["dim"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad density config: {exc}") from exc
        if kind == "constant":
            return cls.constant(_matrix_from_flat(data["const"], dim))
        if kind == "rational":
            num = np.stack(
                [_matrix_from_flat(row, dim) for row in data["num_coeffs"]]
            )
            den_flat = np.asarray(data["den_coeffs"], dtype=float)
            if den_flat.size % 2:
                raise ConfigError("den_coeffs must list real/imag pairs")
            den = den_flat[0::2] + 1j * den_flat[1::2]
            return cls.rational(num, den)
        raise ConfigError(f"density kind {kind!r} not loadable from config")


def eval_density(
    model: DensityModel, grid_size: int = DEFAULT_GRID, label: str = "f"
) -> SpectralDensityGrid:
    """Sample a density model on the uniform grid of the given size."""
    _check_grid_size(grid_size)
    if model.kind == "constant":
        vals = np.broadcast_to(
            model.const, (grid_size, model.dim, model.dim)
        ).copy()
    elif model.kind == "rational":
        lam = grid_frequencies(grid_size)
        kk = np.arange(model.num_coeffs.shape[0])
        phases = np.exp(-1j * np.outer(lam, kk))
        num = np.tensordot(phases, model.num_coeffs, axes=(1, 0))
        den_k = np.arange(model.den_coeffs.size)
        den = np.exp(-1j * np.outer(lam, den_k)) @ model.den_coeffs
        den_mag = np.abs(den) ** 2
        if float(np.min(den_mag)) < 1e-20:
            raise NumericError("rational density denominator vanishes on the grid")
        vals = np.einsum("mij,mkj->mik", num, np.conj(num)) / den_mag[:, None, None]
    else:
        if model.table.grid_size != grid_size:
            raise ConfigError(
                f"tabulated density has grid size {model.table.grid_size}, "
                f"requested {grid_size}"
            )
        return model.table.relabel(label)
    return SpectralDensityGrid(
        grid_size=grid_size,
        values=vals,
        label=label,
        real_symmetric=model.real_symmetric,
    )


def _as_values(density) -> np.ndarray:
    if isinstance(density, SpectralDensityGrid):
        return density.values
    vals = np.asarray(density, dtype=complex)
    if vals.ndim == 1:
        vals = vals[:, None, None]
    return vals


def noisy_density(
    f: SpectralDensityGrid, g: SpectralDensityGrid, spec: IncrementSpec
) -> SpectralDensityGrid:
    """Observation density p = f + |beta|^2 g on the shared grid."""
    if f.grid_size != g.grid_size or f.dim != g.dim:
        raise ConfigError("signal and noise grids are incompatible")
    from .increments import beta_transfer

    lam = f.frequencies
    w = np.abs(beta_transfer(spec, lam)) ** 2
    vals = f.values + w[:, None, None] * g.values
    return SpectralDensityGrid(
        grid_size=f.grid_size,
        values=vals,
        label="p",
        real_symmetric=f.real_symmetric and g.real_symmetric,
    )


_OVERFLOW_GUARD = 1e12


def structural_function(
    f: SpectralDensityGrid,
    spec: IncrementSpec,
    m: int,
    steps_left: Sequence[int] | None = None,
    steps_right: Sequence[int] | None = None,
) -> np.ndarray:
    """Lag-m covariance-style moment of the differenced sequence.

    Computes the grid quadrature of
        e^{i*lambda*m} * r_L(lambda) * conj(r_R(lambda)) * f(lambda)
    where r_L, r_R are the transfer ratios of the spec with its steps replaced
    by steps_left / steps_right (None keeps the spec's own steps).  With equal
    steps on both sides and m = j - k this is Cov of the increment sequence at
    times j and k.
    """
    spec_l = spec if steps_left is None else spec.with_steps(steps_left)
    spec_r = spec if steps_right is None else spec.with_steps(steps_right)
    lam = f.frequencies
    r1 = kernel_ratio(spec_l, lam)
    r2 = kernel_ratio(spec_r, lam)
    weight = r1 * np.conj(r2)
    integrand = (np.exp(1j * lam * m) * weight)[:, None, None] * f.values
    peak = float(np.max(np.abs(integrand)))
    if not np.isfinite(peak) or peak > _OVERFLOW_GUARD:
        raise NumericError(
            f"structural integrand peak {peak:.3e} exceeds overflow guard; "
            "density is not integrable against the kernel weight"
        )
    return integrand.mean(axis=0)


@dataclass(frozen=True)
class MinimalityResult:
    value: float
    passed: bool
    offending_frequency: float | None = None
    detail: str = ""


def minimality_check(
    f: SpectralDensityGrid,
    g: SpectralDensityGrid,
    spec: IncrementSpec,
    cap: float = 1e6,
) -> MinimalityResult:
    """Check the error-free-recovery obstruction integral.

    Evaluates the grid quadrature of Tr[(|beta|^2/|chi|^2) p^{-1}] with
    p = f + |beta|^2 g and declares failure when a sample of p is singular,
    when the value exceeds cap, or when doubling the grid resolution more
    than doubles the value (a divergence signature).  Minimality of the noisy
    observation model requires this integral to be finite.
    """
    p = noisy_density(f, g, spec)
    lam = p.frequencies
    ratio = kernel_ratio(spec, lam)
    with np.errstate(divide="ignore"):
        w_inv = 1.0 / np.abs(ratio) ** 2

    eigmin = np.linalg.eigvalsh(p.values).min(axis=1)
    scale = max(float(np.max(np.abs(p.values))), 1.0)
    singular = eigmin <= 1e-14 * scale
    if np.any(singular):
        idx = int(np.argmax(singular))
        return MinimalityResult(
            value=float("inf"),
            passed=False,
            offending_frequency=float(lam[idx]),
            detail="observation density is singular at the reported frequency",
        )

    inv_tr = np.trace(np.linalg.inv(p.values), axis1=1, axis2=2).real
    samples = w_inv * inv_tr
    if not np.all(np.isfinite(samples)):
        idx = int(np.argmax(~np.isfinite(samples)))
        return MinimalityResult(
            value=float("inf"),
            passed=False,
            offending_frequency=float(lam[idx]),
            detail="weighted inverse diverges at the reported frequency",
        )
    value = float(samples.mean())
    value_half = float(samples[::2].mean())
    if value > cap:
        return MinimalityResult(
            value=value, passed=False, detail=f"value exceeds cap {cap:.1e}"
        )
    if value > 2.0 * value_half * (1.0 + 1e-9) and value > 1.0:
        return MinimalityResult(
            value=value,
            passed=False,
            detail="value more than doubles under grid refinement",
        )
    return MinimalityResult(value=value, passed=True)


def fourier_coeffs(density, k_min: int, k_max: int) -> np.ndarray:
    """Fourier coefficients F(k) = (1/2pi) int e^{-i*lambda*k} fn(lambda).

    density may be a SpectralDensityGrid or a raw (M,) / (M, T, T) array of
    grid samples.  Returns an array of shape (k_max - k_min + 1, T, T) (or
    (n,) for scalar input).  Requires M >= 4 * (k_max - k_min) so the band is
    alias-safe.
    """
    if k_max < k_min:
        raise ValueError("k_max must be >= k_min")
    scalar_in = not isinstance(density, SpectralDensityGrid) and (
        np.asarray(density).ndim == 1
    )
    vals = _as_values(density)
    M = vals.shape[0]
    _check_grid_size(M)
    span = k_max - k_min
    if span > 0 and M < 4 * span:
        raise ConfigError(
            f"grid size {M} too small for coefficient span {span}; need >= {4 * span}"
        )
    fft_vals = np.fft.fft(vals, axis=0) / M
    ks = np.arange(k_min, k_max + 1)
    out = fft_vals[np.mod(ks, M)]
    signs = np.where(ks % 2 == 0, 1.0, -1.0)
    out = out * signs[:, None, None]
    if scalar_in:
        return out[:, 0, 0]
    return out


def trig_synthesis(coeffs, k_start: int, grid_size: int) -> np.ndarray:
    """Evaluate sum_j coeffs[j] e^{i*lambda*(k_start+j)} on the uniform grid.

    Exact at the grid points for any band width: terms whose index exceeds
    the grid wrap onto congruent bins, which is the correct evaluation of the
    finite sum (not an approximation).  coeffs may be (n,), (n, T), or
    (n, T, T); the output keeps the trailing shape.
    """
    _check_grid_size(grid_size)
    c = np.asarray(coeffs, dtype=complex)
    n = c.shape[0]
    S = np.zeros((grid_size,) + c.shape[1:], dtype=complex)
    ks = np.arange(k_start, k_start + n)
    signs = np.where(ks % 2 == 0, 1.0, -1.0)
    signed = c * signs.reshape((n,) + (1,) * (c.ndim - 1))
    np.add.at(S, np.mod(ks, grid_size), signed)
    return grid_size * np.fft.ifft(S, axis=0)


_POLE_GUARD = 1e12


def fractional_density_transform(
    f_tilde: SpectralDensityGrid,
    spec: IncrementSpec,
    window: int = 2048,
) -> SpectralDensityGrid:
    """Density of the long-memory stage driven by a short-memory density.

    Multiplies f_tilde by |G_plus(e^{-i*lambda})|^2 where G_plus is the
    truncated expansion of the inverse fractional operator.  f_tilde must be
    bounded away from zero and infinity; the result carries the long-memory
    poles up to the truncation window.
    """
    eig = np.linalg.eigvalsh(f_tilde.values)
    lo, hi = float(np.min(eig)), float(np.max(eig))
    if lo <= 1e-12 * max(hi, 1.0) or not np.isfinite(hi):
        raise NumericError(
            "pre-transform density must be bounded away from 0 and infinity"
        )
    if spec.is_integer:
        return f_tilde.relabel("f")
    gplus = fractional_expansion(spec, "plus", window)
    h = np.conj(trig_synthesis(gplus.coeffs, 0, f_tilde.grid_size))
    w = np.minimum(np.abs(h) ** 2, _POLE_GUARD)
    vals = w[:, None, None] * f_tilde.values
    return SpectralDensityGrid(
        grid_size=f_tilde.grid_size,
        values=vals,
        label="f",
        real_symmetric=f_tilde.real_symmetric,
    )


def density_from_increment_spectrum(
    f_inc, spec: IncrementSpec, grid_size: int | None = None
) -> SpectralDensityGrid:
    """Convert an ordinary spectral density of the differenced sequence into
    the structural convention: f = |beta/chi|^2 f_inc."""
    vals = _as_values(f_inc)
    M = vals.shape[0] if grid_size is None else grid_size
    lam = grid_frequencies(M)
    ratio = kernel_ratio(spec, lam)
    mag = np.abs(ratio) ** 2
    if float(np.min(mag)) < 1e-24:
        raise NumericError(
            "kernel ratio vanishes on the grid; ordinary density cannot be lifted"
        )
    out = vals / mag[:, None, None]
    label = f_inc.label if isinstance(f_inc, SpectralDensityGrid) else "f"
    real = f_inc.real_symmetric if isinstance(f_inc, SpectralDensityGrid) else False
    return SpectralDensityGrid(
        grid_size=M, values=out, label=label, real_symmetric=real
    )


def increment_spectrum_from_density(
    f: SpectralDensityGrid, spec: IncrementSpec
) -> SpectralDensityGrid:
    """Ordinary spectral density of the differenced sequence:
    f_inc = |chi/beta|^2 f."""
    lam = f.frequencies
    ratio = kernel_ratio(spec, lam)
    mag = np.abs(ratio) ** 2
    vals = mag[:, None, None] * f.values
    return SpectralDensityGrid(
        grid_size=f.grid_size,
        values=vals,
        label=f.label,
        real_symmetric=f.real_symmetric,
    )
