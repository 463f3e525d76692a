"""Least favorable densities and saddle-point verification.

When the structural density of the increments and the noise density are
known only up to an uncertainty class, the forecast tuned to the least
favorable pair in the class minimizes the worst-case mean square error.
This module describes such classes, evaluates the worst-case error of a
fixed forecast as a pair of grid integrals linear in the candidate
densities, solves the scalar stationarity systems by a projected fixed
point, audits saddle-point candidates by sampling admissible pairs, and
reports pointwise residuals of the stationarity equations in both their
direct and factorized forms, including the cointegrated variant.

Solving is scalar only; the matrix systems have no constructive solver
here and are handled by the residual verifier.  Reports are immutable
and JSON-serializable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - python < 3.11
    import tomli as tomllib

from .cointegrate import CointegrationSpec, coint_operators, remainder_noise_density
from .errors import ConfigError, NumericError
from .factorize import _fill_masked
from .forecast import (
    ForecastSolution,
    FunctionalSpec,
    _factor_pieces,
    _solve_system,
    _transfer_rows,
    spectral_characteristic,
)
from .increments import IncrementSpec, chi_transfer, kernel_ratio
from .operators import WeightVector, a_mu_weights, b_and_v_weights, solve_c
from .spectra import (
    SpectralDensityGrid,
    grid_frequencies,
    minimality_check,
    noisy_density,
    trig_synthesis,
)

_TINY = 1e-300
_ACTIVE_REL = 1e-7
_MASK_REL = 1e-12
_BISECT_ITERS = 100

_KINDS = ("moment", "band", "contamination", "l1-ball", "singleton")
_TARGETS = ("structural", "noise", "observation")
_SHAPES = ("matrix", "trace", "componentwise", "weighted", "entrywise")

_KIND_SHAPES = {
    "moment": ("matrix", "trace", "componentwise", "weighted"),
    "band": ("matrix", "trace", "componentwise", "weighted"),
    "contamination": ("matrix", "trace", "componentwise", "weighted"),
    "l1-ball": ("trace", "componentwise", "weighted", "entrywise"),
    "singleton": _SHAPES,
}
_KIND_TARGETS = {
    "moment": ("structural",),
    "band": ("noise", "observation"),
    "contamination": ("structural",),
    "l1-ball": ("noise", "observation"),
    "singleton": _TARGETS,
}


def _as_scalar(x) -> float:
    arr = np.asarray(x)
    if arr.size != 1:
        raise ConfigError(f"expected a scalar constraint value, got shape {arr.shape}")
    return float(arr.reshape(()).real)


def _shape_reduce(values: np.ndarray, shape: str, weight: np.ndarray | None):
    """Per-sample reduction of (M, T, T) samples to the constrained
    quantity; "matrix" and "entrywise" keep the samples themselves."""
    if shape in ("matrix", "entrywise"):
        return values
    if shape == "trace":
        return np.trace(values, axis1=1, axis2=2).real
    if shape == "componentwise":
        return np.diagonal(values, axis1=1, axis2=2).real.copy()
    if shape == "weighted":
        return np.real(np.einsum("ts,mts->m", np.conj(weight), values))
    raise ConfigError(f"unknown shape {shape!r}")


def _kernel_weight(spec: IncrementSpec, grid_size: int) -> np.ndarray:
    return np.abs(kernel_ratio(spec, grid_frequencies(grid_size))) ** 2


def _auto_trunc(grid_size: int) -> int:
    # largest block-operator truncation whose coefficient span the grid
    # quadrature still resolves
    return max(8, (grid_size // 4 - 1) // 2)


@dataclass(frozen=True)
class AdmissibleClass:
    """One side of an uncertainty class pair.

    kind selects the constraint family: "moment" fixes a moment of the
    structural density; "band" confines the constrained density between
    fixed envelopes and fixes its mean; "contamination" mixes a fixed
    anchor with an arbitrary nonnegative density at rate eps under a
    fixed moment; "l1-ball" bounds the mean absolute deviation from an
    anchor by a budget; "singleton" pins the density entirely.

    shape selects the scalar reduction the constraint acts on: the full
    matrix, the trace, each diagonal component, a fixed pairing
    <B, d> = sum_ij conj(B_ij) d_ij, or every entry separately
    ("entrywise", l1 balls only).

    target names the constrained density.  Moments of "structural" and
    "observation" targets carry the squared kernel ratio inside the grid
    mean; moments of "noise" targets are plain means.
    """

    kind: str
    target: str
    shape: str = "trace"
    moment: float | np.ndarray | None = None
    weight_matrix: np.ndarray | None = None
    lower: SpectralDensityGrid | None = None
    upper: SpectralDensityGrid | None = None
    anchor: SpectralDensityGrid | None = None
    eps: float = 0.0
    budget: float | np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown class kind {self.kind!r}")
        if self.target not in _TARGETS:
            raise ConfigError(f"unknown class target {self.target!r}")
        if self.shape not in _KIND_SHAPES[self.kind]:
            raise ConfigError(
                f"shape {self.shape!r} is not defined for kind {self.kind!r}"
            )
        if self.target not in _KIND_TARGETS[self.kind]:
            raise ConfigError(
                f"target {self.target!r} is not defined for kind {self.kind!r}"
            )
        if self.weight_matrix is not None:
            w = np.asarray(self.weight_matrix, dtype=complex)
            if w.ndim != 2 or w.shape[0] != w.shape[1]:
                raise ConfigError("weight_matrix must be square")
            if np.max(np.abs(w - np.conj(w.T))) > 1e-10 * (np.max(np.abs(w)) + _TINY):
                raise ConfigError("weight_matrix must be Hermitian")
            if np.min(np.linalg.eigvalsh(w)) <= 0:
                raise ConfigError("weight_matrix must be positive definite")
            object.__setattr__(self, "weight_matrix", w)
        if self.shape == "weighted" and self.weight_matrix is None:
            raise ConfigError("weighted shape requires weight_matrix")
        if self.moment is not None:
            object.__setattr__(self, "moment", np.asarray(self.moment, dtype=float)
                               if np.ndim(self.moment) else float(self.moment))
        eps = float(self.eps)
        if self.kind == "contamination":
            if not 0.0 <= eps < 1.0:
                raise ConfigError("contamination rate eps must lie in [0, 1)")
        elif eps != 0.0:
            raise ConfigError("eps is only meaningful for contamination classes")
        object.__setattr__(self, "eps", eps)
        if self.kind != "l1-ball" and self.budget is not None:
            raise ConfigError("budget is only meaningful for l1-ball classes")
        getattr(self, "_validate_" + self.kind.replace("-", "_"))()

    def _validate_moment(self):
        if self.moment is None:
            raise ConfigError("moment classes require a moment value")
        self._check_moment_positive(self.moment)

    def _validate_band(self):
        if self.lower is None or self.upper is None:
            raise ConfigError("band classes require lower and upper envelopes")
        if self.moment is None:
            raise ConfigError("band classes require a mean constraint")
        lo, up = self.lower, self.upper
        if lo.grid_size != up.grid_size or lo.dim != up.dim:
            raise ConfigError("band envelopes must share grid size and dimension")
        dlo = _shape_reduce(lo.values, self.shape, self.weight_matrix)
        dup = _shape_reduce(up.values, self.shape, self.weight_matrix)
        scale = float(np.max(np.abs(dup))) + _TINY
        if self.shape == "matrix":
            gap = float(np.min(np.linalg.eigvalsh(dup - dlo)))
        else:
            gap = float(np.min(dup - dlo))
        if gap < -1e-10 * scale:
            raise ConfigError("band lower envelope exceeds the upper envelope")

    def _validate_contamination(self):
        if self.anchor is None:
            raise ConfigError("contamination classes require an anchor density")
        if self.moment is None:
            raise ConfigError("contamination classes require a moment value")
        self._check_moment_positive(self.moment)

    def _validate_l1_ball(self):
        if self.anchor is None:
            raise ConfigError("l1-ball classes require an anchor density")
        if self.budget is None:
            raise ConfigError("l1-ball classes require a budget")
        b = np.asarray(self.budget, dtype=float)
        if np.any(b < 0):
            raise ConfigError("l1-ball budget must be nonnegative")
        if self.shape == "entrywise" and b.ndim != 2:
            raise ConfigError("entrywise budgets must be a matrix of bounds")
        object.__setattr__(self, "budget", b if b.ndim else float(b))

    def _validate_singleton(self):
        if self.anchor is None:
            raise ConfigError("singleton classes require an anchor density")

    def _check_moment_positive(self, moment):
        arr = np.asarray(moment)
        if arr.ndim == 2:
            if np.min(np.linalg.eigvalsh(arr)) <= 0:
                raise ConfigError("matrix moment must be positive definite")
        elif np.any(arr <= 0):
            raise ConfigError("moment values must be positive")

    @property
    def weighted(self) -> bool:
        """Whether the class moment carries the squared kernel ratio."""
        return self.target != "noise"

    @property
    def grid_size(self) -> int | None:
        for d in (self.lower, self.upper, self.anchor):
            if d is not None:
                return d.grid_size
        return None

    @property
    def dim(self) -> int | None:
        for d in (self.lower, self.upper, self.anchor):
            if d is not None:
                return d.dim
        return None

    def moment_of(self, density: SpectralDensityGrid, spec: IncrementSpec):
        """The class's moment functional evaluated at a density."""
        vals = density.values
        if self.weighted:
            vals = _kernel_weight(spec, density.grid_size)[:, None, None] * vals
        red = _shape_reduce(vals, self.shape if self.shape != "entrywise" else "matrix",
                            self.weight_matrix)
        return np.mean(red, axis=0)

    def membership_residual(self, density: SpectralDensityGrid,
                            spec: IncrementSpec) -> float:
        """Relative violation of the class constraints at a density; zero
        (up to roundoff) exactly for members."""
        if self.kind == "singleton":
            scale = float(np.max(np.abs(self.anchor.values))) + _TINY
            return float(np.max(np.abs(density.values - self.anchor.values))) / scale
        viol = 0.0
        if self.kind in ("moment", "band", "contamination"):
            m = self.moment_of(density, spec)
            target = np.asarray(self.moment)
            scale = float(np.max(np.abs(target))) + _TINY
            viol = float(np.max(np.abs(m - target))) / scale
        red = _shape_reduce(density.values, self.shape, self.weight_matrix)
        if self.kind == "band":
            lo = _shape_reduce(self.lower.values, self.shape, self.weight_matrix)
            up = _shape_reduce(self.upper.values, self.shape, self.weight_matrix)
            scale = float(np.max(np.abs(up))) + _TINY
            if self.shape == "matrix":
                low_gap = np.linalg.eigvalsh(red - lo).min()
                up_gap = np.linalg.eigvalsh(up - red).min()
                viol = max(viol, float(-min(low_gap, up_gap)) / scale)
            else:
                viol = max(viol, float(np.max(lo - red)) / scale,
                           float(np.max(red - up)) / scale)
        elif self.kind == "contamination":
            floor = (1.0 - self.eps) * _shape_reduce(
                self.anchor.values, self.shape, self.weight_matrix)
            scale = float(np.max(np.abs(floor))) + 1.0
            if self.shape == "matrix":
                viol = max(viol, float(-np.linalg.eigvalsh(red - floor).min()) / scale)
            else:
                viol = max(viol, float(np.max(floor - red)) / scale)
        elif self.kind == "l1-ball":
            anchor = _shape_reduce(self.anchor.values, self.shape, self.weight_matrix)
            dev = np.mean(np.abs(red - anchor), axis=0)
            budget = np.asarray(self.budget)
            scale = float(np.max(budget)) + _TINY
            if np.all(np.isinf(budget)):
                return viol
            viol = max(viol, float(np.max(dev - budget)) / scale)
        return viol


@dataclass(frozen=True)
class SaddleReport:
    """Residuals and multipliers of a saddle-point candidate.

    residuals maps equation names to relative sup-norm residuals on the
    grid.  multipliers holds scalar multipliers and the pointwise slack
    functions produced by complementary slackness.  conventions records,
    per equation, the normalization and sign rules the residuals were
    checked against.  max_violation is the largest residual and passed
    combines it with convergence against the producer's tolerance.
    """

    residuals: dict
    multipliers: dict
    conventions: dict
    max_violation: float
    passed: bool
    iterations: int = 0
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "residuals": _jsonable(self.residuals),
            "multipliers": _jsonable(self.multipliers),
            "conventions": _jsonable(self.conventions),
            "max_violation": _jsonable(self.max_violation),
            "passed": bool(self.passed),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "diagnostics": _jsonable(self.diagnostics),
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.as_dict(), indent=indent, sort_keys=True)


def _jsonable(x):
    if isinstance(x, Mapping):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        if np.iscomplexobj(x):
            peak = float(np.max(np.abs(x))) if x.size else 0.0
            if x.size and float(np.max(np.abs(x.imag))) <= 1e-12 * (peak + _TINY):
                return _jsonable(x.real)
            return {"re": _jsonable(x.real), "im": _jsonable(x.imag)}
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.complexfloating, complex)):
        return {"re": float(np.real(x)), "im": float(np.imag(x))}
    if isinstance(x, (np.floating, float)):
        f = float(x)
        return f if math.isfinite(f) else str(f)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if x is None or isinstance(x, str):
        return x
    return str(x)


# ---------------------------------------------------------------------------
# worst-case value of a fixed forecast


def value_functional(
    f0: SpectralDensityGrid,
    g0: SpectralDensityGrid,
    spec: IncrementSpec,
    fn: FunctionalSpec,
    f: SpectralDensityGrid,
    g: SpectralDensityGrid,
    solution: ForecastSolution | None = None,
    n_trunc: int | None = None,
) -> float:
    """Error of the forecast tuned to (f0, g0) when the truth is (f, g).

    Two grid integrals, both linear in (f, g): a structural term carrying
    the tuned forecast's weighted stationarity profile against f, and a
    noise term against g.  At (f, g) = (f0, g0) the value coincides with
    the tuned forecast's mean square error.  Maximizing it over a class
    pair is the inner problem of the robust forecast, so a least
    favorable pair maximizes this functional among admissible pairs.

    The kernel weights are folded into the integrand brackets before any
    division, so samples where the increment polynomial vanishes
    contribute finitely.  solution may carry a precomputed forecast at
    (f0, g0) whose correction weights are reused; otherwise the operator
    system is solved at truncation n_trunc (defaulting to the largest the
    grid resolves).
    """
    M = f0.grid_size
    for d in (g0, f, g):
        if d.grid_size != M or d.dim != f0.dim:
            raise ConfigError("all densities must share one grid and dimension")
    if solution is None:
        solution = _solve_system(fn.weights, f0, g0, spec,
                                 n_trunc or _auto_trunc(M), 1, False)
    lam = grid_frequencies(M)
    ratio = kernel_ratio(spec, lam)
    chi = chi_transfer(spec, lam)
    # beta folded as chi / ratio keeps the two kernels exactly consistent
    beta = chi / ratio
    a_rows = _transfer_rows(fn.weights.entries, M)
    c_rows = trig_synthesis(solution.c_mu.entries, 0, M)
    p0 = noisy_density(f0, g0, spec)
    p_inv = np.linalg.inv(p0.values)

    row_f = np.conj(beta)[:, None] * np.einsum("mt,mts->ms", a_rows, g0.values)
    row_f = row_f + c_rows / np.conj(ratio)[:, None]
    row_f = np.einsum("ms,mst->mt", row_f, p_inv)
    term_f = np.einsum("mt,mts,ms->m", row_f, f.values, np.conj(row_f))

    row_g = np.einsum("mt,mts->ms", a_rows, f0.values)
    row_g = row_g - (beta / np.conj(ratio))[:, None] * c_rows
    row_g = np.einsum("ms,mst->mt", row_g, p_inv)
    term_g = np.einsum("mt,mts,ms->m", row_g, g.values, np.conj(row_g))

    return float(np.mean(term_f.real + term_g.real))


def minimax_characteristic(
    f0: SpectralDensityGrid,
    g0: SpectralDensityGrid,
    spec: IncrementSpec,
    fn: FunctionalSpec,
    n_trunc: int = 512,
    n_filter: int | None = None,
) -> ForecastSolution:
    """Forecast tuned to a least favorable pair.

    The robust filter is the classical solve evaluated at the least
    favorable densities; its stated error is the worst-case error over
    the class the pair came from.  Saddle audits take this solution as
    the fixed forecast.
    """
    return spectral_characteristic(f0, g0, spec, fn, n_trunc=n_trunc,
                                   n_filter=n_filter)


# ---------------------------------------------------------------------------
# scalar least favorable solvers


@dataclass(frozen=True)
class SolverConfig:
    """Knobs of the projected fixed-point solvers."""

    damping: float = 0.5
    max_iter: int = 500
    tol: float = 1e-6
    n_trunc: int | None = None
    grid_size: int | None = None

    def __post_init__(self):
        if not 0.0 < self.damping <= 1.0:
            raise ConfigError("damping must lie in (0, 1]")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")
        if self.tol <= 0:
            raise ConfigError("tol must be positive")


def _bisect_monotone(fun, target, increasing: bool, what: str) -> float:
    """Root of fun(x) = target for monotone fun on x > 0, bracketing by
    doubling from 1."""
    x = 1.0
    val = fun(x)
    sign = 1.0 if increasing else -1.0
    lo = hi = x
    if sign * (val - target) < 0.0:
        for _ in range(200):
            hi *= 2.0
            if sign * (fun(hi) - target) >= 0.0:
                break
        else:
            raise NumericError(f"{what}: multiplier bracket expansion failed upward")
        lo = hi / 2.0
    else:
        for _ in range(200):
            lo /= 2.0
            if sign * (fun(lo) - target) <= 0.0:
                break
        else:
            raise NumericError(f"{what}: multiplier bracket expansion failed downward")
        hi = lo * 2.0
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        if sign * (fun(mid) - target) >= 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _scalar_target(cls: AdmissibleClass, key: str) -> float:
    """Scalar-case constraint value in plain-density units.

    For the weighted shape the pairing constant is divided out so every
    shape reduces to a grid-mean constraint on the density itself."""
    raw = getattr(cls, "moment" if key == "moment" else "budget")
    b = 1.0
    if cls.shape == "weighted":
        b = float(np.real(cls.weight_matrix[0, 0]))
    if key == "budget" and np.ndim(raw):
        raw = np.asarray(raw).reshape(-1)[0]
    return _as_scalar(raw) / b


def _scalar_grid(d: SpectralDensityGrid) -> np.ndarray:
    return d.scalar_values().real.copy()


def solve_lf_band(
    f_class: AdmissibleClass,
    g_class: AdmissibleClass,
    spec: IncrementSpec,
    fn: FunctionalSpec,
    config: SolverConfig | None = None,
) -> tuple[SpectralDensityGrid, SpectralDensityGrid, SaddleReport]:
    """Least favorable pair for a structural moment class against a noise
    band class, scalar case.

    Alternates, with damping, a stationarity resolve at the current pair,
    a pointwise profile update clipped to the class envelopes, and a
    bisection of each scalar multiplier onto its mean constraint.  Stops
    when the stationarity and constraint residuals of the current pair
    fall below config.tol; raises NumericError at the iteration cap.
    Either class may be a singleton, in which case its side is pinned and
    its multiplier absorbs the equation.
    """
    _check_solver_kinds(f_class, ("moment", "singleton"), "structural", "f")
    _check_solver_kinds(g_class, ("band", "singleton"), "noise", "g")
    return _solve_scalar_pair(f_class, g_class, spec, fn, config)


def solve_lf_eps_delta(
    f_class: AdmissibleClass,
    g_class: AdmissibleClass,
    spec: IncrementSpec,
    fn: FunctionalSpec,
    config: SolverConfig | None = None,
) -> tuple[SpectralDensityGrid, SpectralDensityGrid, SaddleReport]:
    """Least favorable pair for a contamination class against an l1 ball,
    scalar case.

    The structural update floors the profile at (1 - eps) times the
    anchor; the noise update bumps the anchor upward until the mean
    deviation meets the budget (the error grows with the noise density,
    so the deviation is spent on one side).  eps = 0 or budget = 0 pin
    the corresponding density at its anchor.  An infinite budget admits
    no attained maximum: the structural side is solved against the
    anchor and the report comes back converged = False with the
    unbounded direction recorded, rather than raising.
    """
    _check_solver_kinds(f_class, ("contamination", "singleton"), "structural", "f")
    _check_solver_kinds(g_class, ("l1-ball", "singleton"), "noise", "g")
    return _solve_scalar_pair(f_class, g_class, spec, fn, config)


def _check_solver_kinds(cls, kinds, target, side):
    if cls.kind not in kinds:
        raise ConfigError(
            f"{side}-side class kind {cls.kind!r} is not solvable here; "
            f"expected one of {kinds}"
        )
    if cls.target != target and cls.kind != "singleton":
        raise ConfigError(f"{side}-side class must constrain the {target} density")


def _resolve_grid(f_class, g_class, config) -> int:
    sizes = {c.grid_size for c in (f_class, g_class) if c.grid_size is not None}
    if config is not None and config.grid_size is not None:
        sizes.add(config.grid_size)
    if not sizes:
        raise ConfigError("grid size undetermined; supply envelopes, anchors, "
                          "or SolverConfig.grid_size")
    if len(sizes) > 1:
        raise ConfigError(f"conflicting grid sizes {sorted(sizes)}")
    return sizes.pop()


def _solve_scalar_pair(f_class, g_class, spec, fn, config):
    cfg = config if config is not None else SolverConfig()
    M = _resolve_grid(f_class, g_class, cfg)
    for cls, side in ((f_class, "f"), (g_class, "g")):
        if cls.dim not in (None, 1):
            raise ConfigError(f"{side}-side class is not scalar; the fixed-point "
                              "solver covers dimension one only")
    if fn.weights.dim != 1:
        raise ConfigError("functional weights must be scalar for this solver")

    lam = grid_frequencies(M)
    ratio = kernel_ratio(spec, lam)
    rm2 = np.abs(ratio) ** 2
    chi = chi_transfer(spec, lam)
    chim2 = np.abs(chi) ** 2
    # derived squared noise kernel; keeps S = rm2*f + chim2*g exact
    beta2 = chim2 / rm2

    n_trunc = cfg.n_trunc if cfg.n_trunc is not None else _auto_trunc(M)
    state = _init_sides(f_class, g_class, spec, M, rm2, beta2)
    f_vals, g_vals = state["f"], state["g"]
    a_rows = _transfer_rows(fn.weights.entries, M)[:, 0]
    amu_rows = _transfer_rows(a_mu_weights(fn.weights, spec).entries, M)[:, 0]

    unbounded = state["unbounded"]
    conv_keys = ["f-stationarity", "f-moment", state["g_key"], "g-stationarity"]
    if unbounded:
        conv_keys = ["f-stationarity", "f-moment"]

    sol = None
    residuals: dict = {}
    alpha = beta_m = float("nan")
    last_max = float("inf")
    for it in range(1, cfg.max_iter + 1):
        fgrid = SpectralDensityGrid(grid_size=M, values=f_vals, label="f")
        ggrid = SpectralDensityGrid(grid_size=M, values=g_vals, label="g")
        try:
            sol = _solve_system(fn.weights, fgrid, ggrid, spec, n_trunc, 1,
                                False, check_minimality=(it == 1))
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"iterate lost minimality at step {it}: {exc}")
        c_rows = trig_synthesis(sol.c_mu.entries, 0, M)[:, 0]
        S = rm2 * f_vals + chim2 * g_vals
        w_f = np.abs(amu_rows * g_vals + c_rows)
        score = np.abs(rm2 * a_rows * f_vals - chi * c_rows)

        f_new, alpha = _f_step(w_f, S, rm2, chim2, g_vals, state)
        g_new, beta_m = _g_step(score, S, rm2, beta2, f_vals, state)

        residuals = _scalar_residuals(
            f_vals, g_vals, w_f, score, S, rm2, alpha, beta_m, state)
        last_max = max(residuals[k] for k in conv_keys)
        if not math.isfinite(last_max):
            raise NumericError(f"non-finite residual at step {it}")
        if last_max <= cfg.tol:
            break
        f_vals = f_vals + cfg.damping * (f_new - f_vals)
        g_vals = g_vals + cfg.damping * (g_new - g_vals)
    else:
        raise NumericError(
            f"stationarity iteration exceeded {cfg.max_iter} steps; "
            f"last residual {last_max:.3e}"
        )

    converged = not unbounded
    max_violation = max(residuals.values())
    multipliers = _scalar_multipliers(
        f_vals, g_vals, w_f, score, S, alpha, beta_m, state)
    conventions = _scalar_conventions(state)
    diagnostics = {
        "grid_size": M,
        "n_trunc": n_trunc,
        "damping": cfg.damping,
        "value": float(sol.mse),
        "pinned": state["pinned"],
    }
    if unbounded:
        diagnostics["unbounded_budget"] = (
            "the error functional increases along every upward noise "
            "perturbation, so an infinite budget admits no attained maximum; "
            "the structural side is solved against the anchor"
        )
    report = SaddleReport(
        residuals=residuals,
        multipliers=multipliers,
        conventions=conventions,
        max_violation=float(max_violation),
        passed=bool(converged and max_violation <= cfg.tol),
        iterations=it,
        converged=converged,
        diagnostics=diagnostics,
    )
    fgrid = SpectralDensityGrid(grid_size=M, values=f_vals, label="f")
    ggrid = SpectralDensityGrid(grid_size=M, values=g_vals, label="g")
    return fgrid, ggrid, report


def _init_sides(f_class, g_class, spec, M, rm2, beta2):
    """Initial member densities, pinned-side flags, and scalar targets."""
    state = {"f_class": f_class, "g_class": g_class, "unbounded": False,
             "pinned": []}

    if f_class.kind == "singleton":
        f_vals = _scalar_grid(f_class.anchor)
        state.update(f_pinned=True, floor_f=f_vals.copy(), p_target=None)
        state["pinned"].append("f")
    else:
        p_target = _scalar_target(f_class, "moment")
        if f_class.kind == "contamination":
            anchor = _scalar_grid(f_class.anchor)
            floor_f = (1.0 - f_class.eps) * anchor
            wm_anchor = float(np.mean(rm2 * anchor))
            if p_target < (1.0 - f_class.eps) * wm_anchor * (1.0 - 1e-9):
                raise ConfigError(
                    "contamination moment is below the moment of the retained "
                    "anchor share; the class is empty"
                )
            if f_class.eps == 0.0:
                if abs(p_target - wm_anchor) > 1e-8 * max(p_target, wm_anchor):
                    raise ConfigError(
                        "eps = 0 pins the density at the anchor, so the moment "
                        "must equal the anchor's moment"
                    )
                f_vals = anchor.copy()
                state["pinned"].append("f")
            else:
                f_vals = anchor * (p_target / wm_anchor)
            state.update(f_pinned=(f_class.eps == 0.0), floor_f=floor_f,
                         p_target=p_target)
        else:
            f_vals = np.full(M, p_target / float(np.mean(rm2)))
            state.update(f_pinned=False, floor_f=np.zeros(M), p_target=p_target)

    if g_class.kind == "singleton":
        g_vals = _scalar_grid(g_class.anchor)
        state.update(g_pinned=True, g_key="g-moment", q_target=None)
        state["pinned"].append("g")
    elif g_class.kind == "band":
        V = _scalar_grid(g_class.lower)
        U = _scalar_grid(g_class.upper)
        q_target = _scalar_target(g_class, "moment")
        scale = float(np.max(np.abs(U))) + _TINY
        if not (np.mean(V) - 1e-9 * scale <= q_target <= np.mean(U) + 1e-9 * scale):
            raise ConfigError("band mean constraint lies outside the envelope means")
        span = U - V
        degenerate = float(np.mean(span)) <= 1e-12 * scale
        if degenerate:
            g_vals = V.copy()
            state["pinned"].append("g")
        else:
            c = (q_target - float(np.mean(V))) / float(np.mean(span))
            g_vals = V + np.clip(c, 0.0, 1.0) * span
        state.update(g_pinned=degenerate, band_V=V, band_U=U,
                     q_target=q_target, g_key="g-moment")
    else:
        anchor = _scalar_grid(g_class.anchor)
        delta = _scalar_target(g_class, "budget")
        g_vals = anchor.copy()
        pinned = delta == 0.0
        if math.isinf(delta):
            state["unbounded"] = True
            pinned = True
        if pinned:
            state["pinned"].append("g")
        state.update(g_pinned=pinned, ball_anchor=anchor, delta=delta,
                     g_key="g-budget")
    state["f"] = f_vals
    state["g"] = g_vals
    return state


def _f_step(w_f, S, rm2, chim2, g_vals, state):
    floor_f = state["floor_f"]
    if state["f_pinned"]:
        return floor_f.copy() if state["p_target"] is not None else state["f"].copy(), \
            float(np.max(w_f / S))
    floor_x = rm2 * floor_f
    noise_x = chim2 * g_vals
    target = state["p_target"]
    if float(np.max(w_f)) <= _TINY:
        raise NumericError("stationarity profile vanished; the moment "
                           "constraint cannot bind")

    def moment_at(alpha):
        return float(np.mean(np.maximum(floor_x, w_f / alpha - noise_x)))

    if float(np.mean(floor_x)) >= target * (1.0 - 1e-12):
        return floor_f.copy(), float(np.max(w_f / S))
    alpha = _bisect_monotone(moment_at, target, increasing=False,
                             what="structural moment")
    fx = np.maximum(floor_x, w_f / alpha - noise_x)
    mask = rm2 <= _MASK_REL * float(np.max(rm2))
    f_new = fx / np.where(mask, 1.0, rm2)
    if mask.any():
        f_new = _fill_masked(f_new, mask)
    return f_new, alpha


def _g_step(score, S, rm2, beta2, f_vals, state):
    if state["g_pinned"]:
        return state["g"].copy(), _tight_ratio(score, S, state)
    mask = beta2 <= _MASK_REL * float(np.max(beta2))

    def candidate(b):
        p_t = score / (b * rm2)
        raw = (p_t - f_vals) / np.where(mask, 1.0, beta2)
        return _fill_masked(raw, mask) if mask.any() else raw

    if state["g_class"].kind == "band":
        V, U = state["band_V"], state["band_U"]

        def mean_at(b):
            return float(np.mean(np.clip(candidate(b), V, U)))

        beta_m = _bisect_monotone(mean_at, state["q_target"], increasing=False,
                                  what="noise mean")
        return np.clip(candidate(beta_m), V, U), beta_m

    anchor = state["ball_anchor"]

    def dev_at(b):
        return float(np.mean(np.maximum(anchor, candidate(b)) - anchor))

    beta_m = _bisect_monotone(dev_at, state["delta"], increasing=False,
                              what="noise budget")
    return np.maximum(anchor, candidate(beta_m)), beta_m


def _tight_ratio(score, S, state):
    # pinned side: the multiplier only needs the slack signs to close
    if state["g_class"].kind == "band" and not state["unbounded"]:
        return float(np.mean(score / S))
    return float(np.max(score / S))


def _scalar_residuals(f_vals, g_vals, w_f, score, S, rm2, alpha, beta_m, state):
    res = {}
    f_class, g_class = state["f_class"], state["g_class"]
    act_tol = _ACTIVE_REL
    if f_class.kind == "singleton":
        res["f-stationarity"] = 0.0
        res["f-moment"] = 0.0
    else:
        floor_f = state["floor_f"]
        scale_f = float(np.max(f_vals)) + _TINY
        active = f_vals <= floor_f + act_tol * scale_f
        gap = w_f - alpha * S
        denom = float(np.max(w_f + alpha * S)) + _TINY
        viol = np.where(active, np.maximum(gap, 0.0), np.abs(gap))
        res["f-stationarity"] = float(np.max(viol)) / denom
        wm = float(np.mean(rm2 * f_vals))
        res["f-moment"] = abs(wm - state["p_target"]) / (state["p_target"] + _TINY)

    if g_class.kind == "singleton":
        res["g-stationarity"] = 0.0
        res["g-moment"] = 0.0
        return res
    gap = score - beta_m * S
    denom = float(np.max(score + beta_m * S)) + _TINY
    scale_g = float(np.max(np.abs(g_vals))) + _TINY
    if g_class.kind == "band":
        V, U = state["band_V"], state["band_U"]
        lo = g_vals <= V + act_tol * scale_g
        hi = g_vals >= U - act_tol * scale_g
        viol = np.where(~lo & ~hi, np.abs(gap), 0.0)
        viol = np.where(lo & ~hi, np.maximum(gap, 0.0), viol)
        viol = np.where(hi & ~lo, np.maximum(-gap, 0.0), viol)
        res["g-stationarity"] = float(np.max(viol)) / denom
        q = state["q_target"]
        res["g-moment"] = abs(float(np.mean(g_vals)) - q) / (abs(q) + _TINY)
    else:
        anchor = state["ball_anchor"]
        bump = g_vals > anchor + act_tol * scale_g
        viol = np.where(bump, np.abs(gap), np.maximum(gap, 0.0))
        res["g-stationarity"] = float(np.max(viol)) / denom
        if state["unbounded"]:
            res["g-budget"] = float("inf")
        else:
            dev = float(np.mean(g_vals - anchor))
            delta = state["delta"]
            res["g-budget"] = abs(dev - delta) / (delta + _TINY) if delta > 0 \
                else abs(dev) / (float(np.mean(anchor)) + _TINY)
    return res


def _scalar_multipliers(f_vals, g_vals, w_f, score, S, alpha, beta_m, state):
    out = {"alpha_f": float(alpha), "beta_g": float(beta_m)}
    f_class, g_class = state["f_class"], state["g_class"]
    prof_f = (w_f / S) ** 2
    prof_g = (score / S) ** 2
    if f_class.kind != "singleton":
        scale_f = float(np.max(f_vals)) + _TINY
        active = f_vals <= state["floor_f"] + _ACTIVE_REL * scale_f
        out["gamma_f"] = np.where(active, prof_f - alpha**2, 0.0)
    if g_class.kind == "band":
        V, U = state["band_V"], state["band_U"]
        scale_g = float(np.max(np.abs(g_vals))) + _TINY
        lo = g_vals <= V + _ACTIVE_REL * scale_g
        hi = g_vals >= U - _ACTIVE_REL * scale_g
        out["gamma_g_lower"] = np.where(lo & ~hi, prof_g - beta_m**2, 0.0)
        out["gamma_g_upper"] = np.where(hi & ~lo, prof_g - beta_m**2, 0.0)
    elif g_class.kind == "l1-ball":
        out["gamma_g_sign"] = np.minimum(prof_g / (beta_m**2 + _TINY), 1.0)
    return out


def _scalar_conventions(state) -> dict:
    conv = {
        "frame": "squared kernel ratio times the observation density",
        "f-stationarity": "profile equals alpha_f times the frame off the "
                          "floor set and does not exceed it there",
        "f-moment": "kernel-weighted grid mean of the structural density",
    }
    if state["g_class"].kind == "band":
        conv["g-stationarity"] = ("profile equals beta_g times the frame "
                                  "between the envelopes; at most on the lower "
                                  "envelope, at least on the upper")
        conv["g-moment"] = "plain grid mean of the noise density"
    elif state["g_class"].kind == "l1-ball":
        conv["g-stationarity"] = ("profile equals beta_g times the frame on "
                                  "the bump set and does not exceed it on the "
                                  "anchor set")
        conv["g-budget"] = "grid mean of the deviation from the anchor"
    else:
        conv["g-stationarity"] = "noise density pinned; multiplier reported tight"
    return conv


# ---------------------------------------------------------------------------
# sampling audit


def verify_saddle(
    f0: SpectralDensityGrid,
    g0: SpectralDensityGrid,
    classes: tuple[AdmissibleClass, AdmissibleClass],
    spec: IncrementSpec,
    fn: FunctionalSpec,
    samples: int = 100,
    tol: float = 1e-4,
    seed: int = 0,
    n_trunc: int | None = None,
    strict: bool = False,
) -> SaddleReport:
    """Sampling audit of a least favorable candidate pair.

    Draws admissible pairs built from nonnegative trigonometric
    perturbations of one-sided degree at most four, projected onto the
    class constraints, and evaluates the error of the forecast tuned to
    (f0, g0) under each draw through the linear value functional.  The
    pair passes when no draw beats the value at (f0, g0) by more than
    tol.  With strict = True a violation raises NumericError instead of
    only being reported.  Scalar classes only, except singletons.
    """
    f_class, g_class = classes
    if g_class.target == "observation":
        raise ConfigError("the sampling audit covers the noise model; check "
                          "observation-target candidates with the equation "
                          "residuals instead")
    for cls, d in ((f_class, f0), (g_class, g0)):
        if cls.kind != "singleton" and d.dim != 1:
            raise ConfigError("sampling is defined for scalar classes only")
    n_trunc = n_trunc if n_trunc is not None else _auto_trunc(f0.grid_size)
    sol = _solve_system(fn.weights, f0, g0, spec, n_trunc, 1, False)
    base = value_functional(f0, g0, spec, fn, f0, g0, solution=sol)
    rng = np.random.default_rng(seed)

    margins = np.empty(samples)
    violations = 0
    for i in range(samples):
        fs = _sample_member(f_class, f0, spec, rng)
        gs = _sample_member(g_class, g0, spec, rng)
        val = value_functional(f0, g0, spec, fn, fs, gs, solution=sol)
        margins[i] = val - base
        if margins[i] > tol:
            violations += 1
    max_margin = float(np.max(margins)) if samples else 0.0
    passed = violations == 0
    if strict and not passed:
        raise NumericError(
            f"{violations} of {samples} sampled admissible pairs beat the "
            f"candidate value by more than {tol:.1e} (worst margin "
            f"{max_margin:.3e})"
        )
    return SaddleReport(
        residuals={"saddle-dominance": max(0.0, max_margin)},
        multipliers={},
        conventions={"saddle-dominance": "worst sampled value minus the "
                                         "candidate value, positive part"},
        max_violation=max(0.0, max_margin),
        passed=passed,
        iterations=0,
        converged=True,
        diagnostics={
            "samples": samples,
            "violations": violations,
            "base_value": base,
            "max_margin": max_margin,
            "min_margin": float(np.min(margins)) if samples else 0.0,
            "seed": seed,
        },
    )


def _nonneg_trig(rng: np.random.Generator, M: int) -> np.ndarray:
    """Nonnegative trigonometric polynomial of degree at most eight with
    unit grid mean, floored away from zero."""
    deg = int(rng.integers(1, 5))
    c = rng.standard_normal(deg + 1) + 1j * rng.standard_normal(deg + 1)
    vals = np.abs(trig_synthesis(c, 0, M)) ** 2
    vals = vals / (float(np.mean(vals)) + _TINY)
    return 0.05 + 0.95 * vals


def _sample_member(cls: AdmissibleClass, current: SpectralDensityGrid,
                   spec: IncrementSpec, rng: np.random.Generator
                   ) -> SpectralDensityGrid:
    if cls.kind == "singleton":
        return cls.anchor
    M = current.grid_size
    rm2 = _kernel_weight(spec, M)
    w = rm2 if cls.weighted else np.ones(M)
    label = current.label
    t = _nonneg_trig(rng, M)

    if cls.kind == "moment":
        target = _scalar_target(cls, "moment")
        vals = t * (target / float(np.mean(w * t)))
    elif cls.kind == "contamination":
        anchor = _scalar_grid(cls.anchor)
        target = _scalar_target(cls, "moment")
        head = (1.0 - cls.eps) * float(np.mean(w * anchor))
        rest = max(target - head, 0.0)
        if cls.eps == 0.0 or rest <= _TINY:
            vals = anchor * (target / (float(np.mean(w * anchor)) + _TINY))
        else:
            scale = rest / (cls.eps * float(np.mean(w * t)))
            vals = (1.0 - cls.eps) * anchor + cls.eps * scale * t
    elif cls.kind == "band":
        V = _scalar_grid(cls.lower)
        U = _scalar_grid(cls.upper)
        span = U - V
        target = _scalar_target(cls, "moment") - float(np.mean(V))
        if float(np.mean(span)) <= _TINY or target <= _TINY:
            vals = V.copy()
        else:
            def filled(c):
                return float(np.mean(np.minimum(1.0, c * t) * span))
            c = _bisect_monotone(filled, min(target, filled(1e9)),
                                 increasing=True, what="band sampler")
            vals = V + np.minimum(1.0, c * t) * span
    elif cls.kind == "l1-ball":
        anchor = _scalar_grid(cls.anchor)
        delta = _scalar_target(cls, "budget")
        if math.isinf(delta):
            raise ConfigError("no admissible sampler for an unbounded ball")
        h = t - float(np.mean(t))
        if float(np.mean(np.abs(h))) <= 1e-12:
            h = np.cos(grid_frequencies(M))
        spend = delta * float(rng.uniform(0.0, 1.0))
        s = spend / (float(np.mean(np.abs(h))) + _TINY)
        vals = np.maximum(anchor + s * h, 0.0)
    else:  # pragma: no cover - guarded by the class validator
        raise ConfigError(f"no sampler for kind {cls.kind!r}")
    return SpectralDensityGrid(grid_size=M, values=vals, label=label)


# ---------------------------------------------------------------------------
# matrix equation residuals


def matrix_equation_residual(
    f0: SpectralDensityGrid,
    g0: SpectralDensityGrid,
    classes: tuple[AdmissibleClass, AdmissibleClass],
    spec: IncrementSpec,
    fn: FunctionalSpec,
    multipliers: Mapping | None = None,
    alpha: float | None = None,
    n_trunc: int | None = None,
    n_coeffs: int = 64,
    include_factorized: bool = True,
    pass_tol: float = 1e-6,
) -> SaddleReport:
    """Pointwise residuals of the stationarity equations at a candidate
    pair, any dimension.  A verifier, not a solver.

    classes is the (structural, noise) class pair.  When the second class
    targets the observation density, g0 is read as that density, alpha
    (the cointegration scale) is required, and the difference-form
    equations of the cointegrated model are checked; no factorized route
    exists there.  Otherwise both the direct equations, framed by the
    weighted observation density, and (for integer-step specs, unless
    include_factorized is false) the factorized equations, framed by its
    one-sided factor, are evaluated.

    The per-sample middle matrix required by each equation is recovered
    by sandwiching the candidate's correction transfer between inverse
    frames, projected onto the multiplier structure the class shape
    dictates, and compared against the complementary slackness signs on
    the class's active sets.  In the direct weighted form the pairing
    matrix enters transposed; in the factorized form it enters plain;
    both are evaluated as stated and any gap between them shows up as a
    residual discrepancy rather than being reconciled.

    multipliers may pin "alpha_f" and "beta_g" (scalars, vectors per
    component, or matrix factors); entries left out are estimated from
    the interior samples and reported.  Residuals are amplitude
    normalized; passed means no residual exceeds pass_tol.
    """
    f_class, g_class = classes
    if f_class.target != "structural":
        raise ConfigError("first class must constrain the structural density")
    coint = g_class.target == "observation"
    if coint and alpha is None:
        raise ConfigError("observation-target classes need the cointegration "
                          "scale alpha")
    M, T = f0.grid_size, f0.dim
    if g0.grid_size != M or g0.dim != T:
        raise ConfigError("densities must share one grid and dimension")
    n_trunc = n_trunc if n_trunc is not None else _auto_trunc(M)
    given = dict(multipliers) if multipliers else {}

    lam = grid_frequencies(M)
    ratio = kernel_ratio(spec, lam)
    rm2 = np.abs(ratio) ** 2
    chi = chi_transfer(spec, lam)
    beta2 = np.abs(chi) ** 2 / rm2

    a = fn.weights
    amu = a_mu_weights(a, spec)
    a_rows = _transfer_rows(a.entries, M)
    amu_rows = _transfer_rows(amu.entries, M)

    residuals: dict = {}
    mult_out: dict = {}
    conventions: dict = {
        "frame-direct": "squared kernel ratio times the observation density",
        "profiles": "amplitude normalized: residuals compare square roots "
                    "of the recovered and stated middle matrices",
    }
    diagnostics: dict = {"grid_size": M, "dim": T, "n_trunc": n_trunc}

    if coint:
        cs = CointegrationSpec(alpha=float(alpha), f=f0, p=g0.relabel("p"))
        f_eff = SpectralDensityGrid(grid_size=M, values=cs.alpha**2 * f0.values,
                                    label="f")
        g_star = remainder_noise_density(cs, spec)
        mc = minimality_check(f_eff, g_star, spec)
        if not mc.passed:
            raise NumericError(f"candidate pair is not minimal: {mc.detail}")
        P, T_op, _ = coint_operators(cs, spec, n_trunc)
        rhs = WeightVector(
            b_and_v_weights(a, spec, n_trunc)[0].entries
            - T_op.apply(amu.padded(0, n_trunc + 1))
        )
        c_vec, solve_diag = solve_c(P, rhs)
        c_rows = trig_synthesis(c_vec.entries, 0, M)
        p_vals = g0.values
        mask = beta2 <= _MASK_REL * float(np.max(beta2))
        safe_b2 = np.where(mask, 1.0, beta2)
        g_implied = (p_vals - cs.alpha**2 * f0.values) / safe_b2[:, None, None]
        if mask.any():
            g_implied = _fill_masked(g_implied, mask)
        cf = np.einsum("mts,ms->mt", g_implied, amu_rows) + c_rows
        cp = np.einsum("mts,ms->mt", f0.values, amu_rows) / safe_b2[:, None] - c_rows
        if mask.any():
            cp = _fill_masked(cp, mask)
        lhs_p = np.einsum("mt,ms->mts", cp, np.conj(cp))
        lhs_f = np.einsum("mt,ms->mts", cf, np.conj(cf)) - cs.alpha**2 * lhs_p
        frame_inv, fmask = _frame_inverse(rm2, p_vals)
        mid_f = np.einsum("mts,msu,muv->mtv", frame_inv, lhs_f, frame_inv)
        mid_p = np.einsum("mts,msu,muv->mtv", frame_inv, lhs_p, frame_inv)
        if fmask.any():
            mid_f = _fill_masked(mid_f, fmask)
            mid_p = _fill_masked(mid_p, fmask)
        diagnostics["frame_masked"] = int(fmask.sum())
        _check_one_equation(residuals, mult_out, conventions, "f-direct",
                            mid_f, f_class, f0, spec, given.get("alpha_f"),
                            transpose_weight=True)
        _check_one_equation(residuals, mult_out, conventions, "p-direct",
                            mid_p, g_class, g0, spec, given.get("beta_g"),
                            transpose_weight=True)
        conventions["f-direct"] += "; difference form, the scaled observation "\
                                   "equation subtracted"
        diagnostics["masked_samples"] = int(mask.sum())
        diagnostics["solve"] = solve_diag
        diagnostics["route"] = "cointegrated"
    else:
        sol = _solve_system(a, f0, g0, spec, n_trunc, 1, False)
        c_rows = trig_synthesis(sol.c_mu.entries, 0, M)
        p_vals = noisy_density(f0, g0, spec).values
        cf = np.einsum("mts,ms->mt", g0.values, amu_rows) + c_rows
        cg = rm2[:, None] * np.einsum("mts,ms->mt", f0.values, a_rows) \
            - chi[:, None] * c_rows
        frame_inv, fmask = _frame_inverse(rm2, p_vals)
        mid_f = _sandwich(frame_inv, cf, fmask)
        mid_g = _sandwich(frame_inv, cg, fmask)
        diagnostics["frame_masked"] = int(fmask.sum())
        _check_one_equation(residuals, mult_out, conventions, "f-direct",
                            mid_f, f_class, f0, spec, given.get("alpha_f"),
                            transpose_weight=True)
        _check_one_equation(residuals, mult_out, conventions, "g-direct",
                            mid_g, g_class, g0, spec, given.get("beta_g"),
                            transpose_weight=True)
        diagnostics["value"] = float(sol.mse)
        diagnostics["route"] = "noise-model"

        if include_factorized and spec.is_integer:
            try:
                fact = _factorized_mids(f0, g0, spec, fn, n_coeffs, n_trunc)
            except NumericError as exc:
                diagnostics["factorized"] = f"skipped: {exc}"
            else:
                mid_ff, mid_gf, fact_diag = fact
                _check_one_equation(residuals, mult_out, conventions,
                                    "f-factorized", mid_ff, f_class, f0, spec,
                                    given.get("alpha_f"),
                                    transpose_weight=False)
                _check_one_equation(residuals, mult_out, conventions,
                                    "g-factorized", mid_gf, g_class, g0, spec,
                                    given.get("beta_g"),
                                    transpose_weight=False)
                conventions["frame-factorized"] = (
                    "one-sided factor of the weighted observation density, "
                    "transposed on the left, conjugated on the right"
                )
                diagnostics["factorized"] = fact_diag
        elif include_factorized:
            diagnostics["factorized"] = "skipped: fractional steps admit no " \
                                        "finite-order factor"

    if g_class.kind == "l1-ball":
        anchor_vals = g_class.anchor.values
        red = _shape_reduce(g0.values, g_class.shape, g_class.weight_matrix)
        red_a = _shape_reduce(anchor_vals, g_class.shape, g_class.weight_matrix)
        dev = np.mean(np.abs(red - red_a), axis=0)
        budget = np.asarray(g_class.budget, dtype=float)
        if np.all(np.isfinite(budget)):
            scale = float(np.max(budget)) + _TINY
            residuals["g-budget"] = float(np.max(np.abs(dev - budget))) / scale
            conventions["g-budget"] = "mean absolute deviation from the anchor " \
                                      "meets the budget with equality"

    diagnostics["membership"] = {
        "f": f_class.membership_residual(f0, spec),
        "g": g_class.membership_residual(g0, spec),
    }
    finite = [v for v in residuals.values() if math.isfinite(v)]
    max_violation = max(finite) if finite else 0.0
    passed = bool(len(finite) == len(residuals) and max_violation <= pass_tol)
    return SaddleReport(
        residuals=residuals,
        multipliers=mult_out,
        conventions=conventions,
        max_violation=float(max_violation),
        passed=passed,
        iterations=0,
        converged=True,
        diagnostics=diagnostics,
    )


def _frame_inverse(rm2: np.ndarray, p_vals: np.ndarray
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of the direct frame with near-singular samples masked; the
    caller fills the sandwiched results across the mask."""
    frame = rm2[:, None, None] * p_vals
    ev = np.linalg.eigvalsh(frame)
    scale = float(np.max(np.abs(ev))) + _TINY
    mask = ev[:, 0] <= 1e-12 * scale
    safe = frame.copy()
    if mask.any():
        safe[mask] = np.eye(frame.shape[1])
    return np.linalg.inv(safe), mask


def _sandwich(frame_inv: np.ndarray, col: np.ndarray, mask: np.ndarray
              ) -> np.ndarray:
    lhs = np.einsum("mt,ms->mts", col, np.conj(col))
    mid = np.einsum("mts,msu,muv->mtv", frame_inv, lhs, frame_inv)
    return _fill_masked(mid, mask) if mask.any() else mid


def _factorized_mids(f0, g0, spec, fn, n_coeffs, n_trunc):
    """Middle matrices of the factorized equations: the one-sided transfer
    outer products sandwiched between inverse factor frames."""
    M = f0.grid_size
    pieces = _factor_pieces(f0, g0, spec, fn, n_coeffs=n_coeffs, n_trunc=n_trunc)
    if not pieces.factor.converged:
        raise NumericError("factorization did not converge")
    lam = grid_frequencies(M)
    chi_plus = np.conj(chi_transfer(spec, lam))
    theta_minus = np.conj(trig_synthesis(np.conj(pieces.theta), 0, M))
    theta_plus = trig_synthesis(pieces.theta, 0, M)
    a_minus = np.conj(trig_synthesis(np.conj(fn.weights.entries), 0, M))

    r_plus = np.conj(trig_synthesis(np.conj(pieces.r_seq), 0, M))
    if pieces.w_seq.shape[0] > 1:
        r_plus = r_plus + trig_synthesis(pieces.w_seq[1:], 1, M)
    rg_plus = chi_plus[:, None] * r_plus \
        - np.einsum("mst,ms->mt", theta_plus, a_minus)

    det = np.abs(np.linalg.det(theta_minus))
    mask = det <= 1e-10 * (float(np.max(det)) + _TINY)
    safe = theta_minus.copy()
    if mask.any():
        safe[mask] = np.eye(theta_minus.shape[1])
    left_inv = np.linalg.inv(safe.transpose(0, 2, 1))
    right_inv = np.linalg.inv(np.conj(safe))

    def mid_of(col):
        lhs = np.einsum("mt,ms->mts", col, np.conj(col))
        mid = np.einsum("mts,msu,muv->mtv", left_inv, lhs, right_inv)
        return _fill_masked(mid, mask) if mask.any() else mid

    diag = {
        "factor_order": int(pieces.factor.order),
        "factor_residual": float(pieces.factor.residual),
        "masked_samples": int(mask.sum()),
    }
    return mid_of(r_plus), mid_of(rg_plus), diag


def _check_one_equation(residuals, mult_out, conventions, key, mid, cls,
                        density, spec, given, transpose_weight):
    """Project a recovered middle matrix onto the class's multiplier
    structure and score the slackness signs on its active sets."""
    if cls.kind == "singleton":
        residuals[key] = 0.0
        conventions[key] = "density pinned; no stationarity constraint"
        return
    # nonnegativity acts as an implicit lower envelope for moment classes,
    # so their zero set carries one-sided slack like any other floor
    mode = {"moment": "floor", "contamination": "floor", "band": "band",
            "l1-ball": "ball"}[cls.kind]
    lo, hi = _active_masks(cls, density)
    weight = cls.weight_matrix
    if weight is not None and transpose_weight:
        weight = weight.T

    if cls.shape == "matrix":
        viol, est = _matrix_mid_check(mid, mode, lo, hi, given)
        residuals[key] = viol
        mult_out[_mult_key(key)] = est
        conventions[key] = "full-matrix multiplier; slack signs checked by " \
                           "eigenvalue on the active sets"
        return
    if cls.shape == "entrywise":
        viol, est = _entrywise_mid_check(mid, density.values,
                                         cls.anchor.values, given)
        residuals[key] = viol
        mult_out[_mult_key(key)] = est
        conventions[key] = "entrywise multipliers with the deviation's phase " \
                           "on active entries"
        return

    prof, off = _mid_profile(mid, cls.shape, weight)
    est_sq = _estimate_mult_sq(prof, mode, lo, hi, given)
    viol = _profile_check(prof, est_sq, mode, lo, hi)
    residuals[key] = max(viol, off)
    mult_out[_mult_key(key)] = np.sqrt(np.maximum(est_sq, 0.0))
    conventions[key] = {
        "none": "profile constant at the squared multiplier everywhere",
        "floor": "profile at most the squared multiplier, equal off the "
                 "floor set",
        "band": "profile equal between the envelopes, at most on the lower, "
                "at least on the upper",
        "ball": "profile equal on the bump set, at most elsewhere",
    }[mode] + ("; off-structure content included" if off else "")


def _mult_key(key: str) -> str:
    side = "alpha_f" if key.startswith("f") else "beta_g"
    return side if key.endswith("direct") else side + "_factorized"


def _active_masks(cls, density):
    """Boolean per-sample (or per-sample-per-component) activity masks of
    the class's pointwise constraints at a density."""
    shape = cls.shape if cls.shape != "entrywise" else "matrix"
    red = _shape_reduce(density.values, shape, cls.weight_matrix)
    if cls.kind == "band":
        lo_env = _shape_reduce(cls.lower.values, shape, cls.weight_matrix)
        up_env = _shape_reduce(cls.upper.values, shape, cls.weight_matrix)
        scale = float(np.max(np.abs(up_env))) + _TINY
        if cls.shape == "matrix":
            lo = np.linalg.eigvalsh(red - lo_env)[:, 0] <= _ACTIVE_REL * scale
            hi = np.linalg.eigvalsh(up_env - red)[:, 0] <= _ACTIVE_REL * scale
        else:
            lo = red <= lo_env + _ACTIVE_REL * scale
            hi = red >= up_env - _ACTIVE_REL * scale
        return lo, hi
    if cls.kind == "contamination":
        floor = (1.0 - cls.eps) * _shape_reduce(cls.anchor.values, shape,
                                                cls.weight_matrix)
        scale = float(np.max(np.abs(red))) + _TINY
        if cls.shape == "matrix":
            lo = np.linalg.eigvalsh(red - floor)[:, 0] <= _ACTIVE_REL * scale
        else:
            lo = red <= floor + _ACTIVE_REL * scale
        return lo, np.zeros_like(lo, dtype=bool)
    if cls.kind == "l1-ball":
        anchor = _shape_reduce(cls.anchor.values, shape, cls.weight_matrix)
        scale = float(np.max(np.abs(red))) + _TINY
        up = red > anchor + _ACTIVE_REL * scale
        dn = red < anchor - _ACTIVE_REL * scale
        return up, dn
    if cls.kind == "moment":
        scale = float(np.max(np.abs(red))) + _TINY
        if cls.shape == "matrix":
            lo = np.linalg.eigvalsh(red)[:, 0] <= _ACTIVE_REL * scale
        else:
            lo = red <= _ACTIVE_REL * scale
        return lo, np.zeros_like(lo, dtype=bool)
    none = np.zeros(density.grid_size, dtype=bool)
    return none, none


def _mid_profile(mid, shape, weight):
    """Scalar profile of a structured middle matrix and the relative size
    of its off-structure content."""
    T = mid.shape[1]
    scale = float(np.max(np.abs(mid))) + _TINY
    if shape == "trace":
        prof = np.trace(mid, axis1=1, axis2=2).real / T
        if T == 1:
            return prof, 0.0
        recon = prof[:, None, None] * np.eye(T)
        return prof, float(np.max(np.abs(mid - recon))) / scale
    if shape == "componentwise":
        prof = np.diagonal(mid, axis1=1, axis2=2).real.copy()
        if T == 1:
            return prof, 0.0
        recon = np.einsum("mt,ts->mts", prof, np.eye(T))
        return prof, float(np.max(np.abs(mid - recon))) / scale
    if shape == "weighted":
        wnorm = float(np.sum(np.abs(weight) ** 2))
        prof = np.real(np.einsum("ts,mts->m", np.conj(weight), mid)) / wnorm
        recon = prof[:, None, None] * weight
        return prof, float(np.max(np.abs(mid - recon))) / scale
    raise ConfigError(f"no profile for shape {shape!r}")


def _estimate_mult_sq(prof, mode, lo, hi, given):
    if given is not None:
        g = np.asarray(given, dtype=float)
        return float(g) ** 2 if g.ndim == 0 else g.astype(float) ** 2
    if mode == "none":
        interior = np.ones(prof.shape[0], dtype=bool)
    elif mode == "floor":
        interior = ~lo
    elif mode == "band":
        interior = ~lo & ~hi
    else:
        interior = lo  # the bump set carries the equality
    prof2 = prof if prof.ndim == 2 else prof[:, None]
    inter2 = interior if interior.ndim == 2 else \
        np.broadcast_to(interior[:, None], prof2.shape)
    est = np.empty(prof2.shape[1])
    for k in range(prof2.shape[1]):
        sel = prof2[inter2[:, k], k] if inter2[:, k].any() else None
        if sel is not None and sel.size:
            est[k] = float(np.mean(sel))
        elif mode == "band":
            est[k] = float(np.mean(prof2[:, k]))
        else:
            est[k] = float(np.max(prof2[:, k]))
    return est[0] if prof.ndim == 1 else est


def _profile_check(prof, mult_sq, mode, lo, hi):
    s = np.sqrt(np.maximum(prof, 0.0))
    m = np.sqrt(np.maximum(np.atleast_1d(mult_sq), 0.0))
    if prof.ndim == 1:
        m = m[0]
    scale = float(np.max(s)) + float(np.max(np.atleast_1d(m))) + _TINY
    if prof.ndim == 2 and lo.ndim == 1:
        lo = np.broadcast_to(lo[:, None], prof.shape)
        hi = np.broadcast_to(hi[:, None], prof.shape)
    diff = s - m
    if mode == "none":
        viol = np.abs(diff)
    elif mode == "floor":
        viol = np.where(lo, np.maximum(diff, 0.0), np.abs(diff))
    elif mode == "band":
        viol = np.where(~lo & ~hi, np.abs(diff), 0.0)
        viol = np.where(lo & ~hi, np.maximum(diff, 0.0), viol)
        viol = np.where(hi & ~lo, np.maximum(-diff, 0.0), viol)
    else:  # ball: lo is the upward bump set, hi the downward one
        viol = np.where(lo, np.abs(diff), np.maximum(diff, 0.0))
        viol = np.where(hi, s + m, viol)
    return float(np.max(viol)) / scale


def _matrix_mid_check(mid, mode, lo, hi, given):
    """Rank-one multiplier fit with eigenvalue slack signs."""
    if given is not None:
        vec = np.asarray(given, dtype=complex).reshape(-1)
    else:
        if mode == "none":
            interior = np.ones(mid.shape[0], dtype=bool)
        elif mode == "floor":
            interior = ~lo
        else:
            interior = ~lo & ~hi
        pool = mid[interior] if interior.any() else mid
        mean = pool.mean(axis=0)
        w, v = np.linalg.eigh(0.5 * (mean + np.conj(mean.T)))
        vec = v[:, -1] * math.sqrt(max(float(w[-1]), 0.0))
    target = np.outer(vec, np.conj(vec))
    gap = mid - target
    scale = float(np.max(np.abs(mid))) + float(np.max(np.abs(target))) + _TINY
    eig = np.linalg.eigvalsh(0.5 * (gap + np.conj(gap.transpose(0, 2, 1))))
    full = np.max(np.abs(gap), axis=(1, 2))
    if mode == "none":
        viol = full
    elif mode == "floor":
        viol = np.where(lo, np.maximum(eig[:, -1], 0.0), full)
    else:
        viol = np.where(~lo & ~hi, full, 0.0)
        viol = np.where(lo & ~hi, np.maximum(eig[:, -1], 0.0), viol)
        viol = np.where(hi & ~lo, np.maximum(-eig[:, 0], 0.0), viol)
    return float(np.max(viol)) / scale, vec


def _entrywise_mid_check(mid, g_vals, anchor_vals, given):
    """Per-entry multipliers carrying the deviation's phase on active
    entries; magnitudes bounded by the multiplier elsewhere."""
    dev = g_vals - anchor_vals
    mag = np.abs(dev)
    scale_d = float(np.max(mag)) + _TINY
    active = mag > _ACTIVE_REL * scale_d
    phase = np.where(active, dev / np.where(active, mag, 1.0), 0.0)
    if given is not None:
        mult = np.asarray(given, dtype=float)
    else:
        amid = np.abs(mid)
        num = np.where(active, amid, 0.0).sum(axis=0)
        cnt = active.sum(axis=0)
        mult = np.where(cnt > 0, num / np.maximum(cnt, 1), amid.max(axis=0))
    scale = float(np.max(np.abs(mid))) + float(np.max(mult)) + _TINY
    stated = mult[None, :, :] * phase
    viol = np.where(active, np.abs(mid - stated),
                    np.maximum(np.abs(mid) - mult[None, :, :], 0.0))
    return float(np.max(viol)) / scale, mult


# ---------------------------------------------------------------------------
# descriptor loading


def _density_from_table(tbl: Mapping, grid_size: int | None, label: str
                        ) -> SpectralDensityGrid:
    if "samples" in tbl:
        vals = np.asarray(tbl["samples"], dtype=float)
        return SpectralDensityGrid(grid_size=vals.shape[0], values=vals,
                                   label=label)
    M = int(tbl.get("grid_size", grid_size or 0))
    if not M:
        raise ConfigError("density tables without samples need a grid_size")
    kind = tbl.get("kind", "constant")
    if kind == "constant":
        vals = np.full(M, float(tbl["value"]))
    elif kind == "trig":
        raw = tbl["coeffs"]
        if raw and isinstance(raw[0], (list, tuple)):
            coeffs = np.array([complex(c[0], c[1]) for c in raw])
        else:
            coeffs = np.asarray(raw, dtype=complex)
        scale = float(tbl.get("scale", 1.0))
        vals = scale * np.abs(trig_synthesis(coeffs, 0, M)) ** 2
    else:
        raise ConfigError(f"unknown density table kind {kind!r}")
    return SpectralDensityGrid(grid_size=M, values=vals, label=label)


def class_from_toml(source, grid_size: int | None = None) -> AdmissibleClass:
    """Build an AdmissibleClass from a TOML table, file path, or mapping.

    Top-level keys mirror the constructor: kind, target, shape, moment,
    eps, budget, weight (a real or [re, im]-paired matrix), and density
    sub-tables lower, upper, anchor.  A density table carries either
    samples = [...] or kind = "trig" with coeffs (the squared modulus of
    the one-sided polynomial, times scale) or kind = "constant" with
    value; grid_size supplies the grid when only coefficients appear.
    """
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fh:
            data = tomllib.load(fh)
    else:
        data = dict(source)
    if "class" in data and isinstance(data["class"], Mapping):
        data = dict(data["class"])
    target = data.get("target", "structural")
    label = "f" if target == "structural" else ("p" if target == "observation"
                                                else "g")
    kwargs: dict = {
        "kind": data["kind"],
        "target": target,
        "shape": data.get("shape", "trace"),
    }
    if "moment" in data:
        kwargs["moment"] = data["moment"]
    if "eps" in data:
        kwargs["eps"] = float(data["eps"])
    if "budget" in data:
        kwargs["budget"] = data["budget"]
    if "weight" in data:
        raw = data["weight"]
        rows = []
        for row in raw:
            rows.append([complex(c[0], c[1]) if isinstance(c, (list, tuple))
                         else complex(c) for c in row])
        kwargs["weight_matrix"] = np.array(rows)
    for name in ("lower", "upper", "anchor"):
        if name in data:
            kwargs[name] = _density_from_table(data[name], grid_size, label)
    return AdmissibleClass(**kwargs)
