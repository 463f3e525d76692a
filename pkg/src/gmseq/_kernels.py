"""Hot numeric loops with an optional numba path.

Every kernel has a pure-numpy/python reference implementation. The compiled
path is used when numba imports cleanly and the environment variable
``GMI_NUMBA`` is unset or not "0". Both paths are exercised by the benchmark
script and by the test suite (the fallback is forced via the env flag).
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - environment without numba
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and os.environ.get("GMI_NUMBA", "1") != "0"


def _gegenbauer_py(d: float, u: float, n_max: int) -> np.ndarray:
    out = np.zeros(n_max + 1, dtype=np.float64)
    out[0] = 1.0
    if n_max >= 1:
        out[1] = 2.0 * u * d
    for n in range(2, n_max + 1):
        out[n] = (2.0 * u * (n + d - 1.0) * out[n - 1] - (n + 2.0 * d - 2.0) * out[n - 2]) / n
    return out


def _conv_trunc_py(a: np.ndarray, b: np.ndarray, n_out: int) -> np.ndarray:
    out = np.zeros(n_out, dtype=np.float64)
    la = a.shape[0]
    lb = b.shape[0]
    for m in range(n_out):
        lo = m - lb + 1
        if lo < 0:
            lo = 0
        hi = m + 1
        if hi > la:
            hi = la
        acc = 0.0
        for k in range(lo, hi):
            acc += a[k] * b[m - k]
        out[m] = acc
    return out


def _rebuild_from_increments_py(incr: np.ndarray, e: np.ndarray) -> np.ndarray:
    # incr shape (L, T); e[0] == 1. Solves e * xi = incr for xi with zero
    # pre-samples: xi(m) = incr(m) - sum_{k>=1} e(k) xi(m-k).
    L = incr.shape[0]
    T = incr.shape[1]
    n = e.shape[0] - 1
    xi = np.zeros((L, T), dtype=np.float64)
    for m in range(L):
        for t in range(T):
            acc = incr[m, t]
            kmax = n if n < m else m
            for k in range(1, kmax + 1):
                acc -= e[k] * xi[m - k, t]
            xi[m, t] = acc
    return xi


def _ma_filter_py(eps: np.ndarray, phi: np.ndarray) -> np.ndarray:
    # eps shape (L, T), phi shape (K+1, T, T): y(m) = sum_k phi(k) @ eps(m-k),
    # valid part only: output length L - K.
    L = eps.shape[0]
    T = eps.shape[1]
    K = phi.shape[0] - 1
    out = np.zeros((L - K, T), dtype=np.float64)
    for m in range(K, L):
        for i in range(T):
            acc = 0.0
            for k in range(K + 1):
                for j in range(T):
                    acc += phi[k, i, j] * eps[m - k, j]
            out[m - K, i] = acc
    return out


def _scalar_filter_py(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    # x shape (L, T), scalar taps h shape (W,): y(m) = sum_k h(k) x(m-k),
    # valid part: output length L - W + 1.
    L = x.shape[0]
    T = x.shape[1]
    W = h.shape[0]
    out = np.zeros((L - W + 1, T), dtype=np.float64)
    for m in range(W - 1, L):
        for t in range(T):
            acc = 0.0
            for k in range(W):
                acc += h[k] * x[m - k, t]
            out[m - W + 1, t] = acc
    return out


if USE_NUMBA:
    gegenbauer_kernel = njit(cache=True)(_gegenbauer_py)
    conv_trunc_kernel = njit(cache=True)(_conv_trunc_py)
    rebuild_from_increments_kernel = njit(cache=True)(_rebuild_from_increments_py)
    ma_filter_kernel = njit(cache=True)(_ma_filter_py)
    scalar_filter_kernel = njit(cache=True)(_scalar_filter_py)
else:
    gegenbauer_kernel = _gegenbauer_py
    conv_trunc_kernel = _conv_trunc_py
    rebuild_from_increments_kernel = _rebuild_from_increments_py
    ma_filter_kernel = _ma_filter_py
    scalar_filter_kernel = _scalar_filter_py
