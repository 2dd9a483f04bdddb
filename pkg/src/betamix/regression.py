"""Functional kernel regression with small-ball normalization.

Curves live in L2[0, 1] via trapezoid quadrature on a fixed grid. The
estimator is the kernel-weighted response average at a query curve; its
numerator and denominator are additionally normalized by n times the
small-ball probability estimated from an auxiliary reference sample, so their
limits are the kernel constant M and psi(x) * M respectively. The dynamic
forecast experiment tracks all three errors at a query drawn from the
process itself.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DomainError, ModelViolationError, ValidationError
from .processes import (
    Far1Spec,
    FunctionalPath,
    PsiSpec,
    make_psi,
    make_regression_sample,
    simulate_far1,
    trapezoid_weights,
)
from .seeding import AUX_STREAM_SALT, derive_seed

KERNEL_NAMES = ("uniform", "downslope-linear", "quadratic-decreasing")
NOISE_STREAM_SALT = 0xC2B2AE3D27D4EB4F
M_QUADRATURE_POINTS = 1000
KERNEL_CHECK_POINTS = 1000
FORECAST_BLOCK = 25


def _k_uniform(s):
    return np.ones_like(s)


def _k_downslope(s):
    return 2.0 - s


def _k_quadratic(s):
    return 1.5 - 0.5 * s**2


def _kp_uniform(s):
    return np.zeros_like(s)


def _kp_downslope(s):
    return -np.ones_like(s)


def _kp_quadratic(s):
    return -s


_KERNEL_FUNCS = {
    "uniform": (_k_uniform, _kp_uniform),
    "downslope-linear": (_k_downslope, _kp_downslope),
    "quadratic-decreasing": (_k_quadratic, _kp_quadratic),
}


@dataclass(frozen=True)
class KernelSpec:
    """Compactly supported kernel on [0, 1], zero outside, K(1) > 0, K' <= 0."""

    name: str

    def __post_init__(self):
        if self.name not in _KERNEL_FUNCS:
            raise ConfigError(
                f"unsupported kernel {self.name!r}; choose from {KERNEL_NAMES}"
            )

    def evaluate(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        inside = (s >= 0.0) & (s <= 1.0)
        return np.where(inside, _KERNEL_FUNCS[self.name][0](s), 0.0)

    def derivative(self, s: np.ndarray) -> np.ndarray:
        """Analytic K' on [0, 1); values outside the support are not used."""
        return _KERNEL_FUNCS[self.name][1](np.asarray(s, dtype=float))

    @property
    def at_one(self) -> float:
        return float(_KERNEL_FUNCS[self.name][0](np.float64(1.0)))


def kernel_spec(name: str) -> KernelSpec:
    """Build a kernel and verify its shape conditions numerically."""
    spec = KernelSpec(name)
    s = np.linspace(0.0, 1.0, KERNEL_CHECK_POINTS, endpoint=False)
    values = spec.evaluate(s)
    diffs = np.diff(values) / np.diff(s)
    if np.any(diffs > 1e-9):
        raise ValidationError(f"kernel {name!r} is not non-increasing on [0, 1)")
    if np.any(spec.derivative(s) > 1e-9):
        raise ValidationError(f"kernel {name!r} has positive derivative on [0, 1)")
    if not spec.at_one > 0:
        raise ValidationError(f"kernel {name!r} must satisfy K(1) > 0")
    if spec.evaluate(np.array([1.0 + 1e-9, -1e-9, 2.0])).any():
        raise ValidationError(f"kernel {name!r} must vanish outside [0, 1]")
    return spec


def hilbert_norm(curve: np.ndarray, grid: np.ndarray) -> float:
    """Trapezoid approximation of the L2[0, 1] norm of a curve."""
    curve = np.asarray(curve, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if curve.shape != grid.shape:
        raise ValidationError(f"curve shape {curve.shape} != grid shape {grid.shape}")
    w = trapezoid_weights(grid)
    return float(np.sqrt(np.maximum(w @ curve**2, 0.0)))


def curve_distances(curves: np.ndarray, x: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Quadrature L2 distances from each row of `curves` to the curve x."""
    curves = np.atleast_2d(np.asarray(curves, dtype=float))
    if curves.shape[1] != grid.size or np.asarray(x).shape != (grid.size,):
        raise ValidationError("curves and query must live on the given grid")
    w = trapezoid_weights(grid)
    sq = (curves - x[None, :]) ** 2 @ w
    return np.sqrt(np.maximum(sq, 0.0))


@dataclass(frozen=True)
class NWEvaluation:
    """Estimator output at one query; psi_hat is None when no training point
    falls within the bandwidth (distinguished outcome, never NaN)."""

    psi_hat: Optional[float]
    f_hat: float
    g_hat: float
    n_effective: int

    @property
    def defined(self) -> bool:
        return self.psi_hat is not None


@dataclass(frozen=True)
class RegressionFit:
    """Trained estimator state: kernel, bandwidth, training data, and the
    independent reference curves used for small-ball normalization."""

    kernel: KernelSpec
    bandwidth: float
    training: FunctionalPath
    reference_curves: np.ndarray
    m_hat: Optional[float] = None

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValidationError("bandwidth must be positive")
        if self.training.responses is None:
            raise ValidationError("training path must carry responses")

    def evaluate(self, x: np.ndarray) -> NWEvaluation:
        grid = self.training.grid
        h = self.bandwidth
        d = curve_distances(self.training.curves, x, grid)
        wts = self.kernel.evaluate(d / h)
        denom = float(wts.sum())
        n_eff = int(np.count_nonzero(d <= h))
        n = self.training.n_curves
        ref_d = curve_distances(self.reference_curves, x, grid)
        f_ref = float(np.mean(ref_d <= h))
        if f_ref > 0:
            f_hat = denom / (n * f_ref)
            g_hat = float(self.training.responses @ wts) / (n * f_ref)
        else:
            f_hat = math.nan
            g_hat = math.nan
        if denom > 0:
            psi_hat = float(self.training.responses @ wts) / denom
        else:
            psi_hat = None
        return NWEvaluation(psi_hat=psi_hat, f_hat=f_hat, g_hat=g_hat, n_effective=n_eff)


def nadaraya_watson(fit: RegressionFit, x: np.ndarray) -> NWEvaluation:
    """Kernel-weighted response average at x, with small-ball normalization."""
    return fit.evaluate(x)


@dataclass(frozen=True)
class SmallBallModel:
    """Empirical small-ball probabilities F_x(h) and the scaling profile
    tau(s) = F_x(h_ref s) / F_x(h_ref) at the smallest grid h with mass."""

    x: np.ndarray
    h_grid: np.ndarray
    f_hat: np.ndarray
    h_ref: float
    s_grid: np.ndarray
    tau_hat: np.ndarray
    dimension_d: Optional[int] = None

    def tau(self, s: np.ndarray) -> np.ndarray:
        """Linear interpolation of the profile, anchored at tau(0) = 0."""
        xs = np.concatenate([[0.0], self.s_grid])
        ys = np.concatenate([[0.0], self.tau_hat])
        return np.interp(np.asarray(s, dtype=float), xs, ys)


def estimate_small_ball(
    x: np.ndarray,
    h_grid: Sequence[float],
    sample: np.ndarray,
    grid: Optional[np.ndarray] = None,
    s_grid: Optional[Sequence[float]] = None,
    dimension_d: Optional[int] = None,
) -> SmallBallModel:
    """Estimate F_x(h) over a bandwidth grid from an independent sample.

    `sample` holds curves on `grid`, or plain d-dimensional points when
    `grid` is None (the finite-dimensional surrogate, Euclidean distance).
    """
    h_grid = np.asarray(h_grid, dtype=float)
    if h_grid.ndim != 1 or h_grid.size == 0 or np.any(h_grid <= 0) or np.any(np.diff(h_grid) <= 0):
        raise ValidationError("h_grid must be positive and strictly increasing")
    sample = np.atleast_2d(np.asarray(sample, dtype=float))
    m = sample.shape[0]
    if m < 100:
        raise ValidationError(f"reference sample has {m} < 100 members")
    x = np.asarray(x, dtype=float)
    if grid is None:
        dists = np.sqrt(((sample - x[None, :]) ** 2).sum(axis=1))
    else:
        dists = curve_distances(sample, x, np.asarray(grid, dtype=float))
    f_hat = np.array([np.mean(dists <= h) for h in h_grid])
    if not np.any(f_hat > 0):
        raise DomainError("bandwidth grid too small: every F_hat(h) is zero")
    h_ref = float(h_grid[np.argmax(f_hat > 0)])
    f_ref = float(np.mean(dists <= h_ref))
    if s_grid is None:
        s_grid = np.linspace(0.05, 1.0, 20)
    s_grid = np.asarray(s_grid, dtype=float)
    tau_hat = np.array([np.mean(dists <= h_ref * s) for s in s_grid]) / f_ref
    return SmallBallModel(
        x=x, h_grid=h_grid, f_hat=f_hat, h_ref=h_ref,
        s_grid=s_grid, tau_hat=tau_hat, dimension_d=dimension_d,
    )


def m_constant(kernel: KernelSpec, tau: Callable[[np.ndarray], np.ndarray]) -> float:
    """K(1) - integral of K'(s) tau(s) over [0, 1], composite trapezoid.

    The model requires the result to be positive; nonpositive values raise.
    """
    s = np.linspace(0.0, 1.0, M_QUADRATURE_POINTS)
    tau_vals = np.asarray(tau(s), dtype=float)
    if np.any(tau_vals < -1e-9) or np.any(tau_vals > 1.0 + 1e-9):
        raise ValidationError("tau must map [0, 1] into [0, 1]")
    integrand = kernel.derivative(s) * tau_vals
    m_value = kernel.at_one - float(np.trapezoid(integrand, s))
    if m_value <= 0:
        raise ModelViolationError(f"kernel constant M = {m_value} is not positive")
    return m_value


@dataclass(frozen=True)
class BandwidthChoice:
    """Quantile bandwidth with its summability-condition summand."""

    h: float
    level: float
    summand: float


def bandwidth_schedule(
    n: int, theta: float, pilot_distances: np.ndarray
) -> BandwidthChoice:
    """Empirical n^(-theta) quantile of pilot distances.

    With F(h_n) ~ n^(-theta) the normalized second moment E F^(-2) grows like
    n^(2 theta), which keeps the series sum_n n^(2 theta - 2) (log n)^2
    (log log n)^2 finite for theta < 1/2. Theta is clamped below at 1e-3.
    """
    if not 0.0 < theta < 0.5:
        raise DomainError(f"theta = {theta} outside (0, 1/2)")
    pilot = np.asarray(pilot_distances, dtype=float)
    if pilot.size == 0:
        raise ValidationError("pilot distance sample is empty")
    if n < 3:
        raise DomainError("n must be >= 3")
    theta_eff = max(theta, 1e-3)
    level = float(n**-theta_eff)
    # degenerate all-equal pilots (e.g. a constant process) would give h = 0
    h = max(float(np.quantile(pilot, level)), 1e-12)
    summand = n ** (2 * theta_eff - 2) * math.log(n) ** 2 * math.log(math.log(n)) ** 2
    return BandwidthChoice(h=h, level=level, summand=summand)


def _resolve_t(t_rule: str, n: int) -> int:
    if t_rule == "last":
        return n
    if t_rule == "middle":
        return max(n // 2, 1)
    if t_rule.startswith("index:"):
        t = int(t_rule.split(":", 1)[1])
        if not 1 <= t <= n:
            raise ConfigError(f"t = {t} outside [1, {n}]")
        return t
    raise ConfigError(f"unsupported t_rule {t_rule!r}")


@dataclass(frozen=True)
class ForecastSummary:
    """Per-n aggregate of the dynamic forecast experiment."""

    n: int
    median_error: float
    q90_error: float
    median_f_error: float
    median_g_error: float
    undefined_fraction: float
    median_bandwidth: float


def _forecast_block(args) -> np.ndarray:
    (process, psi, noise_sd, kernel_name, theta, n, t_rule, grid_size, seed, indices) = args
    kernel = KernelSpec(kernel_name)
    rows = np.empty((len(indices), 5))
    for pos, rep in enumerate(indices):
        path = simulate_far1(process, n, grid_size, derive_seed(seed, rep))
        sample = make_regression_sample(
            path, psi, noise_sd, derive_seed(seed, rep, NOISE_STREAM_SALT)
        )
        reference = simulate_far1(
            process, n, grid_size, derive_seed(seed, rep, AUX_STREAM_SALT)
        )
        t = _resolve_t(t_rule, n)
        x = path.curves[t - 1]
        ref_dists = curve_distances(reference.curves, x, path.grid)
        h = bandwidth_schedule(n, theta, ref_dists).h
        ball = estimate_small_ball(
            x, [h], reference.curves, grid=path.grid
        )
        m_hat = m_constant(kernel, ball.tau)
        fit = RegressionFit(
            kernel=kernel, bandwidth=h, training=sample,
            reference_curves=reference.curves, m_hat=m_hat,
        )
        out = fit.evaluate(x)
        psi_func, _ = make_psi(psi, path.grid)
        psi_true = float(psi_func(x[None, :])[0])
        err = abs(out.psi_hat - psi_true) if out.defined else math.nan
        rows[pos] = (
            0.0 if out.defined else 1.0,
            err,
            abs(out.f_hat - m_hat),
            abs(out.g_hat - psi_true * m_hat),
            h,
        )
    return rows


def dynamic_forecast_experiment(
    process: Far1Spec,
    psi: PsiSpec,
    noise_sd: float,
    kernel: KernelSpec,
    theta: float,
    n_grid: Sequence[int],
    t_rule: str = "last",
    reps: int = 200,
    seed: int = 0,
    grid_size: int = 64,
    workers: int = 1,
) -> list[ForecastSummary]:
    """Replicate the fit-and-forecast pipeline over an n grid.

    Per replication: simulate a training path and an independent reference
    sample, choose the bandwidth from reference distances at the query
    X_t (t from t_rule, default the last index), fit, and record the absolute
    errors of the forecast, of the normalized denominator against the kernel
    constant, and of the normalized numerator against psi(X_t) M. Undefined
    estimates (empty neighborhoods) are counted, never averaged in.
    """
    if reps < 1:
        raise ValidationError("reps must be >= 1")
    summaries = []
    for n in n_grid:
        blocks = [
            (process, psi, noise_sd, kernel.name, theta, int(n), t_rule,
             grid_size, seed, range(start, min(start + FORECAST_BLOCK, reps)))
            for start in range(0, reps, FORECAST_BLOCK)
        ]
        if workers > 1 and len(blocks) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(_forecast_block, blocks))
        else:
            parts = [_forecast_block(b) for b in blocks]
        rows = np.concatenate(parts, axis=0)
        undefined = float(rows[:, 0].mean())
        if undefined > 0.5:
            raise DomainError(
                f"bandwidth schedule failed: {undefined:.0%} undefined estimates at n = {n}"
            )
        defined = rows[rows[:, 0] == 0.0]
        summaries.append(
            ForecastSummary(
                n=int(n),
                median_error=float(np.median(defined[:, 1])),
                q90_error=float(np.quantile(defined[:, 1], 0.9)),
                median_f_error=float(np.median(defined[:, 2])),
                median_g_error=float(np.median(defined[:, 3])),
                undefined_fraction=undefined,
                median_bandwidth=float(np.median(rows[:, 4])),
            )
        )
    return summaries
