"""Coefficient algebra and transfer functions of multiplicative seasonal
difference operators.

A spec is a product of factors ``(1 - B^(mu_j * s_j))**d_j`` where the order
``d_j = r_int_j + d_frac_j`` splits into an integer part (polynomial algebra)
and a fractional part (Gegenbauer series algebra). The module provides the
dense polynomial coefficients, their formal inverse, truncated fractional
expansions on the merged frequency set, and the frequency-domain transfer
functions with removable singularities filled.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from gmseq._kernels import conv_trunc_kernel, gegenbauer_kernel

_RATIO_SHIFT = 1e-7  # offset used when filling removable 0/0 grid samples


class Pattern(NamedTuple):
    """One seasonal differencing factor ``(1 - B^(mu*s))**(r_int + d_frac)``."""

    mu: int
    s: int
    r_int: int
    d_frac: float = 0.0


@dataclass(frozen=True)
class IncrementSpec:
    """Multiplicative seasonal increment structure plus the vector period.

    Parameters
    ----------
    patterns:
        Sequence of ``(mu, s, r_int, d_frac)`` records. Steps and seasons are
        positive integers; integer orders are nonnegative; fractional parts
        must keep every aggregated per-frequency order inside (-1/2, 1/2).
    period:
        Dimension T of the vector sequence the operator acts on.
    """

    patterns: tuple[Pattern, ...]
    period: int = 1

    def __init__(self, patterns: Iterable[Sequence], period: int = 1):
        normalized = tuple(Pattern(int(p[0]), int(p[1]), int(p[2]),
                                   float(p[3]) if len(p) > 3 else 0.0)
                           for p in patterns)
        object.__setattr__(self, "patterns", normalized)
        object.__setattr__(self, "period", int(period))
        self._validate()

    def _validate(self) -> None:
        if len(self.patterns) < 1:
            raise ValueError("at least one differencing pattern is required")
        if self.period < 1:
            raise ValueError("period must be a positive integer")
        for p in self.patterns:
            if p.mu < 1:
                raise ValueError(
                    f"step mu={p.mu} rejected: only positive steps are supported")
            if p.s < 1:
                raise ValueError(f"season s={p.s} must be a positive integer")
            if p.r_int < 0:
                raise ValueError(f"integer order r_int={p.r_int} must be >= 0")
        frac = [p for p in self.patterns if p.d_frac != 0.0]
        for p in frac:
            if p.mu != 1:
                raise ValueError(
                    "fractional orders are only supported at step mu=1 "
                    f"(got mu={p.mu})")
        seasons = [p.s for p in frac]
        if any(b <= a for a, b in zip(seasons, seasons[1:])):
            raise ValueError(
                "fractional-bearing seasons must be strictly increasing")
        for _, d_nu in self.merged_fractional_frequencies():
            if not (-0.5 < d_nu < 0.5):
                raise ValueError(
                    f"aggregated fractional order {d_nu:.4f} outside (-1/2, 1/2): "
                    "the differenced sequence would not be stationary")

    # -- derived structure -------------------------------------------------

    @property
    def n_gamma(self) -> int:
        """Degree of the integer-order increment polynomial."""
        return sum(p.mu * p.s * p.r_int for p in self.patterns)

    @property
    def total_integer_order(self) -> int:
        return sum(p.r_int for p in self.patterns)

    @property
    def is_integer(self) -> bool:
        return all(p.d_frac == 0.0 for p in self.patterns)

    @property
    def max_step(self) -> int:
        return max(p.mu for p in self.patterns)

    def merged_fractional_frequencies(self) -> list[tuple[float, float]]:
        """Aggregated fractional orders on the union of seasonal frequencies.

        Returns ``[(nu, D_nu)]`` sorted by frequency, where nu runs over
        ``2*pi*k/s`` for ``k = 0..floor(s/2)`` of every fractional-bearing
        season and ``D_nu`` sums the fractional orders of the patterns whose
        frequency set contains nu.
        """
        acc: dict[Fraction, float] = {}
        for p in self.patterns:
            if p.d_frac == 0.0:
                continue
            for k in range(p.s // 2 + 1):
                key = Fraction(k, p.s)
                acc[key] = acc.get(key, 0.0) + p.d_frac
        return [(2.0 * np.pi * float(key), val)
                for key, val in sorted(acc.items())]

    @property
    def has_long_memory(self) -> bool:
        return any(0.0 < d_nu < 0.5
                   for _, d_nu in self.merged_fractional_frequencies())

    def integer_part(self) -> "IncrementSpec":
        """The same spec with all fractional parts dropped."""
        return IncrementSpec([(p.mu, p.s, p.r_int) for p in self.patterns],
                             period=self.period)

    def with_steps(self, mus: Sequence[int]) -> "IncrementSpec":
        """Replace the step of every pattern (seasons and orders kept)."""
        if len(mus) != len(self.patterns):
            raise ValueError("one step per pattern is required")
        return IncrementSpec(
            [(int(m), p.s, p.r_int, p.d_frac)
             for m, p in zip(mus, self.patterns)],
            period=self.period)


@dataclass(frozen=True)
class PolyCoeffs:
    """Dense coefficients of the integer-order increment polynomial."""

    coeffs: np.ndarray

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1


@dataclass(frozen=True)
class SeriesCoeffs:
    """Truncated coefficient series with a recorded tail-size estimate.

    ``tail_bound`` is the estimated magnitude of the first omitted
    coefficient. It is an estimate, not a certified bound.
    """

    coeffs: np.ndarray
    truncation: int
    tail_bound: float


def increment_polynomial(spec: IncrementSpec) -> PolyCoeffs:
    """Dense polynomial coefficients of the integer-order operator.

    The output ``e`` satisfies ``e[0] == 1`` and has degree
    ``sum(mu*s*r_int)``; applying it to a constant series gives zero whenever
    some integer order is positive.
    """
    if not spec.is_integer:
        raise ValueError("increment_polynomial requires integer orders only")
    poly = np.array([1], dtype=np.int64)
    for p in spec.patterns:
        base = np.zeros(p.mu * p.s + 1, dtype=np.int64)
        base[0] = 1
        base[-1] = -1
        for _ in range(p.r_int):
            poly = np.convolve(poly, base)
    return PolyCoeffs(coeffs=poly.astype(np.float64))


def apply_increment(series: np.ndarray, spec: IncrementSpec) -> np.ndarray:
    """Run the integer-order differencing filter over a series.

    ``series`` has shape (L,) or (L, T); the output drops the first
    ``n_gamma`` samples: ``out[m] = sum_k e[k] * series[m-k]``.
    """
    e = increment_polynomial(spec).coeffs
    n = len(e) - 1
    arr = np.asarray(series, dtype=np.float64)
    if arr.ndim == 1:
        if arr.shape[0] <= n:
            raise ValueError(f"series must be longer than {n} samples")
        return np.convolve(arr, e, mode="valid")
    if arr.shape[0] <= n:
        raise ValueError(f"series must be longer than {n} samples")
    return np.stack([np.convolve(arr[:, t], e, mode="valid")
                     for t in range(arr.shape[1])], axis=1)


def dmu_coefficients(spec: IncrementSpec, n_max: int) -> SeriesCoeffs:
    """Leading coefficients of the formal inverse of the increment polynomial.

    Convolving the result with ``increment_polynomial(spec)`` gives the unit
    impulse within the truncation window.
    """
    if not spec.is_integer:
        raise ValueError("dmu_coefficients requires integer orders only")
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    out = np.zeros(n_max + 1)
    out[0] = 1.0
    for p in spec.patterns:
        base = np.zeros(n_max + 1)
        base[:: p.mu * p.s] = 1.0
        for _ in range(p.r_int):
            out = conv_trunc_kernel(out, base, n_max + 1)
    growth = max(spec.total_integer_order - 1, 0)
    tail = abs(out[-1]) * ((n_max + 2) / (n_max + 1)) ** growth
    return SeriesCoeffs(coeffs=out, truncation=n_max, tail_bound=float(tail))


def gegenbauer_coeffs(d: float, u: float, n_max: int) -> SeriesCoeffs:
    """Gegenbauer coefficient family C_n^(d)(u) by the three-term recursion.

    These are the series coefficients of ``(1 - 2*u*B + B**2)**(-d)``. The
    recursion is used instead of the factorial closed form to avoid
    gamma-function overflow; the closed form survives as a test oracle.
    """
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    if not -1.0 <= u <= 1.0:
        raise ValueError("u must lie in [-1, 1]")
    coeffs = gegenbauer_kernel(float(d), float(u), int(n_max))
    tail = abs(coeffs[-1]) if n_max >= 1 else 0.0
    return SeriesCoeffs(coeffs=coeffs, truncation=n_max, tail_bound=float(tail))


def fractional_expansion(spec: IncrementSpec, sign: str, n_max: int) -> SeriesCoeffs:
    """Truncated series expansion of the fractional operator or its inverse.

    ``sign="minus"`` expands the operator itself (the direct filter, a
    terminating binomial-product family when seasons collapse); ``sign="plus"``
    expands its formal inverse, whose coefficients decay like ``m**(D-1)``.
    Both are built as iterated truncated convolutions of per-frequency
    Gegenbauer series over the merged frequency set, with the order halved at
    the endpoint frequencies 0 and pi (those factors carry a squared real
    root).
    """
    if sign not in ("plus", "minus"):
        raise ValueError("sign must be 'plus' or 'minus'")
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    merged = spec.merged_fractional_frequencies()
    for _, d_nu in merged:
        if not (-0.5 < d_nu < 0.5):
            raise ValueError("fractional orders violate the stationarity gate")
    out = np.zeros(n_max + 1)
    out[0] = 1.0
    for nu, d_nu in merged:
        d_eff = d_nu / 2.0 if _is_endpoint(nu) else d_nu
        order = d_eff if sign == "plus" else -d_eff
        factor = gegenbauer_kernel(order, float(np.cos(nu)), int(n_max))
        out = conv_trunc_kernel(out, factor, n_max + 1)
    d_max = max((abs(d) for _, d in merged), default=0.0)
    tail = abs(out[-1]) * ((n_max + 2) / (n_max + 1)) ** (d_max - 1.0) \
        if n_max >= 1 else 0.0
    return SeriesCoeffs(coeffs=out, truncation=n_max, tail_bound=float(tail))


def _is_endpoint(nu: float) -> bool:
    return abs(nu) < 1e-12 or abs(nu - np.pi) < 1e-12


def chi_transfer(spec: IncrementSpec, lam) -> np.ndarray:
    """Frequency response ``prod_j (1 - exp(-i*lam*mu_j*s_j))**d_j``."""
    lam = np.asarray(lam, dtype=np.float64)
    out = np.ones(lam.shape, dtype=np.complex128)
    for p in spec.patterns:
        d = p.r_int + p.d_frac
        if d == 0.0:
            continue
        base = 1.0 - np.exp(-1j * lam * (p.mu * p.s))
        if d == int(d):
            out = out * base ** int(d)
        else:
            out = out * np.power(base.astype(np.complex128), d)
    return out


def beta_transfer(spec: IncrementSpec, lam) -> np.ndarray:
    """Product of elementary linear factors matching the seasonal root set.

    For each pattern the factors are ``(i*lam - 2*pi*i*k/s)**d`` over
    ``k = -floor(s/2)..floor(s/2)``; the quotient against ``chi_transfer``
    stays bounded wherever steps equal one.
    """
    lam = np.asarray(lam, dtype=np.float64)
    out = np.ones(lam.shape, dtype=np.complex128)
    for p in spec.patterns:
        d = p.r_int + p.d_frac
        if d == 0.0:
            continue
        half = p.s // 2
        for k in range(-half, half + 1):
            base = 1j * (lam - 2.0 * np.pi * k / p.s)
            if d == int(d):
                out = out * base ** int(d)
            else:
                out = out * np.power(base.astype(np.complex128), d)
    return out


def kernel_ratio(spec: IncrementSpec, lam) -> np.ndarray:
    """``chi_transfer / beta_transfer`` with removable 0/0 samples filled.

    Fill rule: a non-finite sample at lam0 is replaced by the average of the
    ratio evaluated at lam0 +/- 1e-7, which sits on the finite limit for
    every shared root.
    """
    lam = np.asarray(lam, dtype=np.float64)
    scalar = lam.ndim == 0
    lam = np.atleast_1d(lam)
    with np.errstate(all="ignore"):
        ratio = chi_transfer(spec, lam) / beta_transfer(spec, lam)
    bad = ~np.isfinite(ratio)
    if np.any(bad):
        lam_bad = lam[bad]
        with np.errstate(all="ignore"):
            up = chi_transfer(spec, lam_bad + _RATIO_SHIFT) / \
                beta_transfer(spec, lam_bad + _RATIO_SHIFT)
            dn = chi_transfer(spec, lam_bad - _RATIO_SHIFT) / \
                beta_transfer(spec, lam_bad - _RATIO_SHIFT)
        ratio[bad] = 0.5 * (up + dn)
    return ratio[0] if scalar else ratio
