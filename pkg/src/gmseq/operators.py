"""Finite sections of the forecast-equation operators and weight algebra.

Operators are (N+1) x (N+1) grids of T x T blocks.  Block (k, j) of a
kernel-type operator is the Fourier coefficient at lag k - j of a matrix
function on the frequency grid, so each operator is block Toeplitz.  Weight
vectors carry their own starting index because functional weights live on
0..N while boundary weights live on -n_gamma..-1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NumericError
from .factorize import FactorizationResult, invert_factor
from .increments import IncrementSpec, dmu_coefficients, increment_polynomial, kernel_ratio
from .spectra import SpectralDensityGrid, fourier_coeffs, noisy_density

_ROLES = ("P", "T", "Q", "Z", "D")
_KERNEL_GUARD = 1e12
_CONDITION_CAP = 1e12


@dataclass(frozen=True)
class BlockOperator:
    """Square grid of matrix blocks acting on weight sequences."""

    blocks: np.ndarray
    role: str

    def __post_init__(self):
        if self.role not in _ROLES:
            raise ValueError(f"unknown operator role {self.role!r}")
        b = np.asarray(self.blocks, dtype=complex)
        if b.ndim != 4 or b.shape[0] != b.shape[1] or b.shape[2] != b.shape[3]:
            raise ValueError(
                f"blocks must have shape (N+1, N+1, T, T), got {b.shape}"
            )
        object.__setattr__(self, "blocks", b)

    @property
    def n_trunc(self) -> int:
        return self.blocks.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.blocks.shape[2]

    def matrix(self) -> np.ndarray:
        n1, _, t, _ = self.blocks.shape
        return self.blocks.transpose(0, 2, 1, 3).reshape(n1 * t, n1 * t)

    def apply(self, entries: np.ndarray) -> np.ndarray:
        arr = np.asarray(entries, dtype=complex)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.shape != (self.blocks.shape[0], self.dim):
            raise ValueError(
                f"operator of size {self.blocks.shape[0]} x dim {self.dim} "
                f"cannot act on entries of shape {arr.shape}"
            )
        return np.einsum("kjst,jt->ks", self.blocks, arr)


@dataclass(frozen=True)
class WeightVector:
    """Finite weight sequence with an explicit starting index.

    entries has shape (L, T); entry j is the weight at index start + j.
    Functional weights start at 0; boundary-condition weights start at
    -n_gamma.
    """

    entries: np.ndarray
    start: int = 0

    def __post_init__(self):
        arr = np.asarray(self.entries, dtype=complex)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2:
            raise ValueError(f"entries must be (L, T), got {arr.shape}")
        object.__setattr__(self, "entries", arr)

    @property
    def stop(self) -> int:
        return self.start + self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]

    def at(self, k: int) -> np.ndarray:
        if self.start <= k < self.stop:
            return self.entries[k - self.start]
        return np.zeros(self.dim, dtype=complex)

    def padded(self, start: int, stop: int) -> np.ndarray:
        out = np.zeros((stop - start, self.dim), dtype=complex)
        lo = max(start, self.start)
        hi = min(stop, self.stop)
        if hi > lo:
            out[lo - start : hi - start] = self.entries[
                lo - self.start : hi - self.start
            ]
        return out


def _toeplitz_blocks(kernel_vals: np.ndarray, n_trunc: int) -> np.ndarray:
    fc = fourier_coeffs(kernel_vals, -n_trunc, n_trunc)
    n1 = n_trunc + 1
    idx = np.arange(n1)
    return fc[idx[:, None] - idx[None, :] + n_trunc]


def _transpose_samples(vals: np.ndarray) -> np.ndarray:
    return np.transpose(vals, (0, 2, 1))


def build_PTQ(
    f: SpectralDensityGrid,
    g: SpectralDensityGrid,
    spec: IncrementSpec,
    n_trunc: int,
) -> tuple[BlockOperator, BlockOperator, BlockOperator]:
    """Finite sections of the three kernel operators of the forecast system.

    P has symbol (1/w) [p^{-1}]^T, T has symbol (1/w) [g p^{-1}]^T, and Q has
    symbol [f p^{-1} g]^T, where w is the squared kernel ratio and
    p = f + |beta|^2 g.  Raises NumericError when p has a singular sample or
    the weighted kernel is unbounded (non-minimal models).
    """
    if n_trunc < 1:
        raise ValueError("n_trunc must be >= 1")
    p = noisy_density(f, g, spec)
    scale = max(float(np.max(np.abs(p.values))), 1e-30)
    eigmin = np.linalg.eigvalsh(p.values).min(axis=1)
    if float(np.min(eigmin)) <= 1e-14 * scale:
        idx = int(np.argmin(eigmin))
        raise NumericError(
            f"observation density is singular at frequency "
            f"{p.frequencies[idx]:.6f}; run the minimality check"
        )
    p_inv = np.linalg.inv(p.values)
    lam = p.frequencies
    ratio = kernel_ratio(spec, lam)
    with np.errstate(divide="ignore"):
        w_inv = 1.0 / np.abs(ratio) ** 2
    if not np.all(np.isfinite(w_inv)) or float(np.max(w_inv)) > _KERNEL_GUARD:
        raise NumericError(
            "kernel weight is unbounded on the grid (uncancelled numerator "
            "zeros); the operator sections do not exist"
        )

    kern_p = w_inv[:, None, None] * _transpose_samples(p_inv)
    gp = np.einsum("mij,mjk->mik", g.values, p_inv)
    kern_t = w_inv[:, None, None] * _transpose_samples(gp)
    fpg = np.einsum("mij,mjk,mkl->mil", f.values, p_inv, g.values)
    kern_q = _transpose_samples(fpg)
    for name, kern in (("P", kern_p), ("T", kern_t), ("Q", kern_q)):
        peak = float(np.max(np.abs(kern)))
        if not np.isfinite(peak) or peak > _KERNEL_GUARD:
            raise NumericError(f"{name} kernel exceeds the overflow guard")
    return (
        BlockOperator(_toeplitz_blocks(kern_p, n_trunc), "P"),
        BlockOperator(_toeplitz_blocks(kern_t, n_trunc), "T"),
        BlockOperator(_toeplitz_blocks(kern_q, n_trunc), "Q"),
    )


def build_D(spec: IncrementSpec, n_trunc: int, dim: int = 1) -> BlockOperator:
    """Upper-triangular section of the inverse-kernel series operator:
    block (k, j) is d(j - k) I for j >= k."""
    d = dmu_coefficients(spec, n_trunc).coeffs
    n1 = n_trunc + 1
    blocks = np.zeros((n1, n1, dim, dim), dtype=complex)
    eye = np.eye(dim)
    for k in range(n1):
        for j in range(k, n1):
            blocks[k, j] = d[j - k] * eye
    return BlockOperator(blocks, "D")


def build_Z(
    g: SpectralDensityGrid,
    factor: FactorizationResult,
    n_trunc: int,
    psi_order: int | None = None,
) -> BlockOperator:
    """Toeplitz section of the factored cross operator:
    Z(n) = sum_{t>=0} conj(psi(t)) conj(g_{t-n}) with psi the causal inverse
    of the factor and g_k the Fourier coefficients of the noise density."""
    grid_cap = g.grid_size // 8 - n_trunc
    if psi_order is None:
        # keep the coefficient span alias-safe on this grid
        psi_order = min(n_trunc + factor.order, max(factor.order, grid_cap))
    psi = invert_factor(factor.coeffs, psi_order)
    span = psi_order + n_trunc
    g_fc = fourier_coeffs(g, -span, span)

    def g_at(k: int) -> np.ndarray:
        return g_fc[k + span]

    n1 = n_trunc + 1
    dim = factor.dim
    zvals = np.zeros((2 * n_trunc + 1, dim, dim), dtype=complex)
    for n in range(-n_trunc, n_trunc + 1):
        acc = np.zeros((dim, dim), dtype=complex)
        for t in range(psi_order + 1):
            if abs(t - n) > span:
                continue
            acc += np.conj(psi[t]) @ np.conj(g_at(t - n))
        zvals[n + n_trunc] = acc
    idx = np.arange(n1)
    blocks = zvals[idx[:, None] - idx[None, :] + n_trunc]
    return BlockOperator(blocks, "Z")


def a_mu_weights(a: WeightVector, spec: IncrementSpec) -> WeightVector:
    """Convolve functional weights with the increment polynomial:
    a_mu(k) = sum_l e(l) a(k - l), supported on 0..N+n_gamma."""
    if a.start != 0:
        raise ValueError("functional weights must start at index 0")
    e = increment_polynomial(spec).coeffs
    out = np.stack(
        [np.convolve(e, a.entries[:, c], mode="full") for c in range(a.dim)],
        axis=1,
    )
    return WeightVector(out, start=0)


def b_and_v_weights(
    a: WeightVector, spec: IncrementSpec, n_trunc: int
) -> tuple[WeightVector, WeightVector]:
    """Inverse-kernel pushforward b and boundary weights v.

    b(k) = sum_{m>=k} d(m-k) a(m) for k = 0..n_trunc;
    v(k) = sum_{l=0}^{min(n_trunc, k+n_gamma)} e(l-k) b(l) for
    k = -n_gamma..-1.  Requires n_trunc >= (top functional index) + n_gamma
    so the section sees the whole functional support.
    """
    if a.start != 0:
        raise ValueError("functional weights must start at index 0")
    n_a = a.entries.shape[0] - 1
    n = spec.n_gamma
    if n_trunc < n_a + n:
        raise ValueError(
            f"truncation {n_trunc} too small: need >= {n_a + n} "
            "(functional support plus increment degree)"
        )
    d = dmu_coefficients(spec, n_trunc + 1).coeffs
    b = np.zeros((n_trunc + 1, a.dim), dtype=complex)
    for k in range(n_trunc + 1):
        for m in range(k, n_a + 1):
            b[k] += d[m - k] * a.entries[m]
    e = increment_polynomial(spec).coeffs
    v = np.zeros((n, a.dim), dtype=complex)
    for k in range(-n, 0):
        acc = np.zeros(a.dim, dtype=complex)
        for m in range(0, min(n_trunc, k + n) + 1):
            acc += e[m - k] * b[m]
        v[k + n] = acc
    return WeightVector(b, start=0), WeightVector(v, start=-n)


def solve_c(op: BlockOperator, rhs: WeightVector) -> tuple[WeightVector, dict]:
    """Solve the P-system for correction weights with one refinement step.

    Returns the solution (indexed from 0) and diagnostics with the condition
    estimate and the refinement correction size.  Raises NumericError when
    the section is numerically singular.
    """
    if rhs.start != 0:
        raise ValueError("right-hand side must start at index 0")
    mat = op.matrix()
    vec = rhs.padded(0, op.n_trunc + 1).ravel()
    cond = float(np.linalg.cond(mat))
    if not np.isfinite(cond) or cond > _CONDITION_CAP:
        raise NumericError(
            f"operator section condition {cond:.3e} exceeds the cap; "
            "the truncated system is unreliable"
        )
    lu, piv = scipy.linalg.lu_factor(mat, check_finite=False)
    sol = scipy.linalg.lu_solve((lu, piv), vec, check_finite=False)
    resid = vec - mat @ sol
    corr = scipy.linalg.lu_solve((lu, piv), resid, check_finite=False)
    sol = sol + corr
    corr_size = float(np.max(np.abs(corr)))
    out = WeightVector(sol.reshape(op.n_trunc + 1, op.dim), start=0)
    return out, {"condition": cond, "refinement_correction": corr_size}


def factorized_P_inverse(factor: FactorizationResult, n_trunc: int) -> BlockOperator:
    """Section of the inverse P operator assembled from the one-sided factor:
    block (k, j) = sum_{l=0}^{min(k,j)} conj(theta(k-l)) theta(j-l)^T.

    Every sum is finite, so no tail truncation enters beyond the factor's own
    order.
    """
    th = factor.coeffs
    K = factor.order
    dim = factor.dim
    n1 = n_trunc + 1
    blocks = np.zeros((n1, n1, dim, dim), dtype=complex)
    for k in range(n1):
        for j in range(n1):
            acc = np.zeros((dim, dim), dtype=complex)
            for l in range(min(k, j) + 1):
                if k - l > K or j - l > K:
                    continue
                acc += np.conj(th[k - l]) @ th[j - l].T
            blocks[k, j] = acc
    return BlockOperator(blocks, "P")


def inner_product(x: WeightVector, y: WeightVector) -> complex:
    """<x, y> = sum_k x(k)^T conj(y(k)) over the overlap of supports."""
    lo = min(x.start, y.start)
    hi = max(x.stop, y.stop)
    xv = x.padded(lo, hi)
    yv = y.padded(lo, hi)
    return complex(np.sum(xv * np.conj(yv)))
