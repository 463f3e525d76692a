"""Spectral factorization of matrix densities.

Produces one-sided moving-average coefficients theta(0..K) with
Theta(e^{-il}) = sum_a theta(a) e^{-i*l*a} and
Theta Theta^* = density on the grid.  Scalar targets go through the cepstral
(exp-log) construction; matrix targets use a block-Toeplitz Cholesky pass
followed by Wilson iteration.  The normalized factor has theta(0) lower
triangular with nonnegative diagonal, which pins down the unitary freedom.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.linalg

from .errors import NumericError
from .increments import IncrementSpec, beta_transfer, chi_transfer, kernel_ratio
from .spectra import (
    SpectralDensityGrid,
    _as_values,
    fourier_coeffs,
    grid_frequencies,
    noisy_density,
    trig_synthesis,
)


class FactorizationError(NumericError):
    """Raised when a density admits no usable one-sided factorization."""


@dataclass(frozen=True)
class FactorizationResult:
    """One-sided factor of a matrix density.

    coeffs has shape (K+1, T, T); residual is the relative sup-norm
    reconstruction error of Theta Theta^* against the target on the grid;
    normalization records the convention fixing the unitary freedom.
    """

    coeffs: np.ndarray
    residual: float
    normalization: str = "lower_triangular"
    converged: bool = True
    iterations: int = 0

    @property
    def order(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.coeffs.shape[1]


_POSITIVITY_TOL = 1e-12
_WILSON_TOL = 1e-9
_WILSON_CAP = 200


def _transfer_on_grid(coeffs: np.ndarray, grid_size: int) -> np.ndarray:
    """Theta(e^{-il}) sampled on the grid: sum_a coeffs[a] e^{-i*l*a}."""
    return np.conj(trig_synthesis(np.conj(coeffs), 0, grid_size))


def _reconstruction_residual(coeffs: np.ndarray, target: np.ndarray) -> float:
    theta = _transfer_on_grid(coeffs, target.shape[0])
    recon = np.einsum("mij,mkj->mik", theta, np.conj(theta))
    scale = max(float(np.max(np.abs(target))), 1e-30)
    return float(np.max(np.abs(recon - target))) / scale


def _normalize(coeffs: np.ndarray) -> np.ndarray:
    """Rotate the factor so theta(0) is lower triangular, nonneg diagonal."""
    theta0 = coeffs[0]
    q, r = np.linalg.qr(np.conj(theta0.T))
    # force positive diagonal on r so the convention is unique
    signs = np.diag(r).copy()
    signs[np.abs(signs) < 1e-30] = 1.0
    phase = signs / np.abs(signs)
    q = q * phase[None, :]
    rotated = np.einsum("kij,jl->kil", coeffs, q)
    # exact zeros above the diagonal of theta(0)
    out = rotated.copy()
    out[0] = np.tril(out[0])
    return out


def _cepstral_scalar(values: np.ndarray, n_coeffs: int) -> np.ndarray:
    s = values.real
    log_s = np.log(s)
    gamma = fourier_coeffs(log_s.astype(complex), 0, n_coeffs)
    gamma = gamma.copy()
    gamma[0] *= 0.5
    log_theta = trig_synthesis(np.conj(gamma), 0, values.shape[0])
    theta_grid = np.exp(np.conj(log_theta))
    th = fourier_coeffs(theta_grid, -n_coeffs, 0)[::-1]
    return th[:, None, None]


def _bauer_matrix(fc: np.ndarray, n_coeffs: int, dim: int) -> np.ndarray:
    """Block-Toeplitz Cholesky estimate of theta(0..K).

    fc holds Fourier coefficients F(k) for k = 0..K with
    density = sum_k F(k) e^{i*l*k} and F(-k) = F(k)^H.  The covariance block
    at offset i-j >= 0 is F(i-j)^H.
    """
    depth = 4 * (n_coeffs + 1)
    blocks = np.empty((depth, depth, dim, dim), dtype=complex)
    zero = np.zeros((dim, dim), dtype=complex)
    for i in range(depth):
        for j in range(depth):
            k = i - j
            if abs(k) > n_coeffs:
                blocks[i, j] = zero
            elif k >= 0:
                blocks[i, j] = np.conj(fc[k].T)
            else:
                blocks[i, j] = fc[-k]
    full = blocks.transpose(0, 2, 1, 3).reshape(depth * dim, depth * dim)
    try:
        low = scipy.linalg.cholesky(full, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise FactorizationError(
            "block covariance is not positive definite; target density is "
            "degenerate or too close to singular"
        ) from exc
    last = low[(depth - 1) * dim : depth * dim]
    th = np.empty((n_coeffs + 1, dim, dim), dtype=complex)
    for k in range(n_coeffs + 1):
        col = depth - 1 - k
        th[k] = last[:, col * dim : (col + 1) * dim]
    return th


def _causal_part(fc_0_to_K: np.ndarray) -> np.ndarray:
    out = fc_0_to_K.copy()
    out[0] *= 0.5
    return out


def _wilson_refine(
    theta: np.ndarray, target: np.ndarray, tol: float = _WILSON_TOL
) -> tuple[np.ndarray, bool, int]:
    """Wilson iteration: psi <- psi [psi^{-1} S psi^{-*} + I]_+ / ... with the
    causal-part operator halving the zero lag."""
    M = target.shape[0]
    n_coeffs = theta.shape[0] - 1
    dim = theta.shape[1]
    eye = np.eye(dim)
    current = theta.copy()
    for it in range(1, _WILSON_CAP + 1):
        psi = _transfer_on_grid(current, M)
        try:
            psi_inv = np.linalg.inv(psi)
        except np.linalg.LinAlgError as exc:
            raise FactorizationError(
                "factor became singular during Wilson refinement"
            ) from exc
        inner = np.einsum(
            "mij,mjk,mlk->mil", psi_inv, target, np.conj(psi_inv)
        )
        g = inner + eye[None]
        # coefficients of g at e^{-i*l*k}, k = 0..K
        g_fc = fourier_coeffs(g, -n_coeffs, 0)[::-1]
        g_plus_grid = _transfer_on_grid(_causal_part(g_fc), M)
        new_psi_grid = np.einsum("mij,mjk->mik", psi, g_plus_grid)
        new_coeffs = fourier_coeffs(new_psi_grid, -n_coeffs, 0)[::-1]
        step = float(np.max(np.abs(new_coeffs - current)))
        scale = max(float(np.max(np.abs(new_coeffs))), 1e-30)
        current = new_coeffs
        if step / scale < tol:
            return current, True, it
    return current, False, _WILSON_CAP


def canonical_factorize(
    density,
    n_coeffs: int = 64,
    method: str = "auto",
    refine: bool = True,
) -> FactorizationResult:
    """Factor a strictly positive definite density on the grid.

    method is "auto" (cepstral for scalars, Bauer plus Wilson refinement for
    matrices), "cepstral" (scalar only), or "bauer".  Raises
    FactorizationError when the target has a singular or near-singular
    sample; use factorize_increment_weighted for targets with designed
    unit-circle zeros.
    """
    vals = _as_values(density)
    M, dim = vals.shape[0], vals.shape[1]
    if n_coeffs < 1:
        raise ValueError("n_coeffs must be >= 1")
    if M < 4 * n_coeffs:
        raise FactorizationError(
            f"grid size {M} cannot resolve {n_coeffs} factor coefficients"
        )
    eigs = np.linalg.eigvalsh(vals)
    lo = float(np.min(eigs))
    hi = float(np.max(eigs))
    if lo <= _POSITIVITY_TOL * max(hi, 1.0):
        raise FactorizationError(
            f"target density is not strictly positive (min eigenvalue "
            f"{lo:.3e}); one-sided factorization is unavailable"
        )
    if method not in ("auto", "cepstral", "bauer"):
        raise ValueError(f"unknown factorization method {method!r}")
    if method == "cepstral" and dim != 1:
        raise ValueError("cepstral method handles scalar densities only")

    iterations = 0
    converged = True
    if dim == 1 and method in ("auto", "cepstral"):
        th = _cepstral_scalar(vals[:, 0, 0], n_coeffs)
    else:
        fc = fourier_coeffs(vals, 0, n_coeffs)
        th = _bauer_matrix(fc, n_coeffs, dim)
        if refine:
            th, converged, iterations = _wilson_refine(th, vals)
    th = _normalize(th)
    residual = _reconstruction_residual(th, vals)
    return FactorizationResult(
        coeffs=th,
        residual=residual,
        normalization="lower_triangular",
        converged=converged,
        iterations=iterations,
    )


def invert_factor(coeffs: np.ndarray, n_out: int) -> np.ndarray:
    """Causal inverse of a one-sided factor.

    Returns psi(0..n_out) with sum_k theta(k) psi(n-k) = delta_n, so
    Psi = Theta^{-1} as a power series in e^{-il}.
    """
    th = np.asarray(coeffs, dtype=complex)
    if th.ndim == 1:
        th = th[:, None, None]
    K = th.shape[0] - 1
    dim = th.shape[1]
    try:
        inv0 = np.linalg.inv(th[0])
    except np.linalg.LinAlgError as exc:
        raise FactorizationError("leading factor coefficient is singular") from exc
    psi = np.zeros((n_out + 1, dim, dim), dtype=complex)
    psi[0] = inv0
    for n in range(1, n_out + 1):
        acc = np.zeros((dim, dim), dtype=complex)
        for k in range(1, min(n, K) + 1):
            acc += th[k] @ psi[n - k]
        psi[n] = -inv0 @ acc
    return psi


def _chi_zero_candidates(spec: IncrementSpec) -> list[tuple[float, int]]:
    """Frequencies in [0, pi] where the integer-order kernel numerator
    vanishes, with the total vanishing order at each."""
    orders: dict = {}
    for p in spec.patterns:
        if p.r_int == 0:
            continue
        period = p.mu * p.s
        for k in range(period // 2 + 1):
            key = Fraction(2 * k, period)  # nu / pi in [0, 1]
            orders[key] = orders.get(key, 0) + p.r_int
    return [(float(key) * np.pi, o) for key, o in sorted(orders.items())]


def _zero_polynomial(freqs_orders: list[tuple[float, int]]) -> np.ndarray:
    """Real polynomial in e^{-il} vanishing at the given frequencies (and
    their mirror images) with the given orders."""
    z = np.array([1.0])
    for nu, order in freqs_orders:
        if abs(nu) < 1e-12:
            factor = np.array([1.0, -1.0])
        elif abs(nu - np.pi) < 1e-12:
            factor = np.array([1.0, 1.0])
        else:
            factor = np.array([1.0, -2.0 * np.cos(nu), 1.0])
        for _ in range(order):
            z = np.convolve(z, factor)
    return z


def _fill_masked(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Replace masked grid samples by the average of the nearest unmasked
    neighbors on each side (periodic)."""
    out = values.copy()
    M = values.shape[0]
    idxs = np.nonzero(mask)[0]
    for i in idxs:
        left = (i - 1) % M
        while mask[left]:
            left = (left - 1) % M
        right = (i + 1) % M
        while mask[right]:
            right = (right + 1) % M
        out[i] = 0.5 * (values[left] + values[right])
    return out


def factorize_increment_weighted(
    f: SpectralDensityGrid,
    g: SpectralDensityGrid,
    spec: IncrementSpec,
    n_coeffs: int = 64,
) -> FactorizationResult:
    """Factor the kernel-weighted observation density.

    The target is |chi/beta|^2 (f + |beta|^2 g) on the grid, the density that
    the one-step innovations of the differenced noisy sequence see.  Unit
    circle zeros produced by the differencing kernel are detected, peeled off
    as an exact real polynomial, and reattached to the factor of the smooth
    remainder, so targets like a pure differenced-noise density factor
    exactly.
    """
    if not spec.is_integer:
        raise FactorizationError(
            "weighted factorization requires integer differencing orders; "
            "fractional kernels produce non-polynomial zeros"
        )
    p = noisy_density(f, g, spec)
    M = p.grid_size
    lam = p.frequencies
    ratio = kernel_ratio(spec, lam)
    target = (np.abs(ratio) ** 2)[:, None, None] * p.values
    scale = max(float(np.max(np.abs(target))), 1e-30)

    materialized = []
    for nu, order in _chi_zero_candidates(spec):
        dist = np.abs(lam - nu)
        dist = np.minimum(dist, 2.0 * np.pi - dist)  # nu = pi lives at -pi
        idx = int(np.argmin(dist))
        sample = target[idx]
        if float(np.max(np.abs(sample))) <= 1e-10 * scale:
            materialized.append((nu, order))

    if not materialized:
        return canonical_factorize(target, n_coeffs)

    z = _zero_polynomial(materialized)
    if z.size - 1 > n_coeffs:
        raise FactorizationError(
            f"designed zeros need degree {z.size - 1} but only {n_coeffs} "
            "coefficients were requested"
        )
    z_grid = np.conj(trig_synthesis(z.astype(complex), 0, M))
    z_mag = np.abs(z_grid) ** 2
    mask = z_mag <= 1e-9 * float(np.max(z_mag))
    with np.errstate(divide="ignore", invalid="ignore"):
        rem = target / z_mag[:, None, None]
    rem = _fill_masked(rem, mask)
    rem_result = canonical_factorize(rem, n_coeffs - (z.size - 1))
    theta = np.array(
        [
            sum(
                z[a] * rem_result.coeffs[k - a]
                for a in range(max(0, k - rem_result.order), min(z.size - 1, k) + 1)
            )
            for k in range(z.size - 1 + rem_result.order + 1)
        ]
    )
    theta = _normalize(theta)
    residual = _reconstruction_residual(theta, target)
    return FactorizationResult(
        coeffs=theta,
        residual=residual,
        normalization="lower_triangular",
        converged=rem_result.converged,
        iterations=rem_result.iterations,
    )
