"""Exponential bound formulas and their Monte Carlo counterparts.

The bound evaluators reproduce three closed-form expressions exactly as
displayed: a Laplace-transform bound for centered bounded aggregates over a
geometrically mixing chain, the derived tail bound with the
n / (log n log log n) rate, and its extension to unbounded aggregates via a
truncation decomposition and an infimum over the truncation level. The MC
side estimates the matching tail probabilities and Laplace transforms on
simulated chains, and calibration helpers pick the bounds' free constants on
a log grid so the functional form can be falsified against the estimates.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import ConfigError, DomainError, FitError, MomentError, ValidationError
from .processes import ContractiveChainSpec, _simulate_chain_columns
from .seeding import AUX_STREAM_SALT, derive_seed

REP_BLOCK = 1000          # replication block size, fixed so results are
                          # identical for any worker count
B_GRID_POINTS = 240
B_GRID_LO = 1.0 + 1e-3
B_GRID_HI = 1e6
GOLDEN_REL_TOL = 1e-6


def _conjugate_ok(p: float, q: float) -> bool:
    return abs(1.0 / p + 1.0 / q - 1.0) <= 1e-12


@dataclass(frozen=True)
class BoundParams:
    """Parameter bag for the bound formulas.

    kappa0/kappa1 bound the mixing decay, C and (a1, a2) are the free bound
    constants, gamma the Laplace argument, A the interval length, B the
    function bound (or truncation level), and (p, q), (r, u) are Hoelder
    conjugate pairs with k the moment order of the unbounded extension.
    """

    kappa0: float = 1.0
    kappa1: float = 1.0
    C: float = 1.0
    a1: float = 1.0
    a2: float = 1.0
    gamma: float = 0.01
    A: float = 14.0
    B: float = 1.0
    epsilon: float = 0.1
    n: int = 100
    t: int = 1
    p: float = 2.0
    q: float = 2.0
    r: float = 2.0
    u: float = 2.0
    k: float = 3.0

    def __post_init__(self):
        for name in ("kappa0", "kappa1", "C", "a1", "a2", "A", "B"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.gamma < 0 or self.epsilon < 0:
            raise ValidationError("gamma and epsilon must be >= 0")
        if self.n < 3:
            raise ValidationError("n must be >= 3 so log log n > 0")
        if self.t < 1:
            raise ValidationError("t must be >= 1")
        if min(self.p, self.q, self.r, self.u) <= 1 or self.k <= 1:
            raise ValidationError("p, q, r, u, k must all exceed 1")
        if not _conjugate_ok(self.p, self.q):
            raise ValidationError("p and q are not Hoelder conjugate within 1e-12")
        if not _conjugate_ok(self.r, self.u):
            raise ValidationError("r and u are not Hoelder conjugate within 1e-12")


class TailEstimate(NamedTuple):
    epsilon: float
    n: int
    reps: int
    p_hat: float
    ci_half_width: float


class LaplaceEstimate(NamedTuple):
    value: float
    std_error: float
    overflowed: bool


class TruncationTriple(NamedTuple):
    plus: float
    zero: float
    minus: float


class RateFit(NamedTuple):
    a1_hat: float
    a2_hat: float
    r_squared: float


@dataclass(frozen=True)
class MomentInputs:
    """Moments of the aggregate under the independent-copy product law.

    m_pr is E[f^(p r)]^(1/(p r)) (already rooted), m_k is E[f^k] (raw).
    """

    m_pr: float
    m_k: float

    def __post_init__(self):
        if not (math.isfinite(self.m_pr) and math.isfinite(self.m_k)):
            raise MomentError("moments must be finite")
        if self.m_pr <= 0 or self.m_k <= 0:
            raise MomentError("moments must be positive")


def laplace_bound_terms(params: BoundParams) -> tuple[float, float]:
    """Both summands of the Laplace-transform bound, preconditions enforced."""
    k0, k1, c = params.kappa0, params.kappa1, params.C
    gamma, b, a = params.gamma, params.B, params.A
    if a < max(14.0, 2.0 * k1):
        raise DomainError(f"A = {a} violates A >= max(14, 2*kappa1) = {max(14.0, 2.0 * k1)}")
    log_a = math.log(a)
    gamma_cap = min((1.0 if k1 > 1.0 else k1) / 2.0, k1 / (4.0 * log_a))
    if not 0.0 < gamma * b <= gamma_cap:
        raise DomainError(
            f"gamma*B = {gamma * b} violates 0 < gamma*B <= "
            f"min((1 and kappa1)/2, kappa1/(4 log A)) = {gamma_cap}"
        )
    term1 = 3.0 * k0 * math.exp(-k1 * a / (4.0 * log_a))
    term2 = math.exp(c * gamma**2 * b**2 * a * log_a + gamma * b * a / log_a)
    return term1, term2


def laplace_bound(params: BoundParams) -> float:
    """3 k0 exp(-k1 A / (4 log A)) + exp(C g^2 B^2 A log A + g B A / log A)."""
    term1, term2 = laplace_bound_terms(params)
    return term1 + term2


def corollary_bound(params: BoundParams) -> float:
    """a1 exp(-a2 eps n / (B log n log log n)); needs n >= 3."""
    n = params.n
    if n < 3:
        raise DomainError("n must be >= 3 so log log n is positive")
    rate = params.epsilon * n / (params.B * math.log(n) * math.log(math.log(n)))
    return params.a1 * math.exp(-params.a2 * rate)


def truncate(value: float, B: float) -> TruncationTriple:
    """Split value into upper excess + clamped core + lower excess.

    plus = value - min(value, B) >= 0, zero = clamp(value, -B, B),
    minus = value - max(value, -B) <= 0, each to one rounding of the exact
    decomposition, arranged so plus + zero + minus reconstructs value
    bit-for-bit: value - fl(value -+ B) is always exactly representable, and
    a one-ulp shift of the excess keeps the core inside [-B, B].
    """
    if not B > 0:
        raise DomainError("truncation level B must be positive")
    if not math.isfinite(value):
        raise DomainError("value must be finite")
    if value > B:
        plus = value - B
        zero = value - plus
        if zero > B:
            plus = math.nextafter(plus, math.inf)
            zero = value - plus
        return TruncationTriple(plus, zero, 0.0)
    if value < -B:
        minus = value + B
        zero = value - minus
        if zero < -B:
            minus = math.nextafter(minus, -math.inf)
            zero = value - minus
        return TruncationTriple(0.0, zero, minus)
    return TruncationTriple(0.0, value, 0.0)


def unbounded_bound_terms(
    params: BoundParams, moments: MomentInputs, B: float
) -> tuple[float, float, float]:
    """The three summands of the unbounded-aggregate tail bound at level B."""
    eps, n = params.epsilon, params.n
    if eps <= 0:
        raise DomainError("epsilon must be positive")
    k, p, u = params.k, params.p, params.u
    rate = eps * n / (B * math.log(n) * math.log(math.log(n)))
    t1 = params.a1 / eps * math.exp(-params.a2 * rate)
    t2 = 4.0 / (eps * (k - 1.0)) * B ** (-(k - 1.0)) * moments.m_k
    t3 = params.a1 / (n * eps) * moments.m_pr * B ** (-k / (p * u)) * moments.m_k ** (1.0 / (p * u))
    return t1, t2, t3


def unbounded_bound(
    params: BoundParams,
    moments: MomentInputs,
    grid_points: int = B_GRID_POINTS,
) -> tuple[float, float]:
    """Minimize the three-term expression over the truncation level B > 1.

    Scans a log-uniform grid on [1 + 1e-3, 1e6], then refines the best point
    with golden-section search to 1e-6 relative tolerance. Returns
    (minimal value, minimizing B).
    """

    def objective(b: float) -> float:
        return sum(unbounded_bound_terms(params, moments, b))

    grid = np.geomspace(B_GRID_LO, B_GRID_HI, grid_points)
    values = np.array([objective(b) for b in grid])
    if not np.any(np.isfinite(values)):
        raise MomentError("bound is infinite on the whole grid; moments too heavy")
    best = int(np.argmin(values))
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, grid_points - 1)]
    b_star, v_star = _golden_section_log(objective, lo, hi, GOLDEN_REL_TOL)
    if values[best] < v_star:
        return float(values[best]), float(grid[best])
    return float(v_star), float(b_star)


def _golden_section_log(func, lo: float, hi: float, rel_tol: float) -> tuple[float, float]:
    """Golden-section minimization in log space; rel_tol is relative in B."""
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    s_lo, s_hi = math.log(lo), math.log(hi)
    x1 = s_hi - inv_phi * (s_hi - s_lo)
    x2 = s_lo + inv_phi * (s_hi - s_lo)
    f1, f2 = func(math.exp(x1)), func(math.exp(x2))
    while s_hi - s_lo > rel_tol:
        if f1 <= f2:
            s_hi, x2, f2 = x2, x1, f1
            x1 = s_hi - inv_phi * (s_hi - s_lo)
            f1 = func(math.exp(x1))
        else:
            s_lo, x1, f1 = x1, x2, f2
            x2 = s_lo + inv_phi * (s_hi - s_lo)
            f2 = func(math.exp(x2))
    s_best = x1 if f1 <= f2 else x2
    return math.exp(s_best), min(f1, f2)


# ---------------------------------------------------------------------------
# Named aggregating functions f(x, y). All are bounded with a declared bound;
# the odd-in-x ones are exactly centered (the supported chains have symmetric
# stationary laws), the rest are centered by a pilot estimate of E f(X_0, y).
# ---------------------------------------------------------------------------

def _f_zero(x, y):
    return np.zeros(np.broadcast(x, y).shape)


def _f_first(x, y):
    return x * np.ones_like(y)


def _f_odd_clip(x, y):
    return np.sign(x) * np.minimum(np.abs(x), 1.0) * np.ones_like(y)


def _f_odd_clip_damped(x, y):
    return np.sign(x) * np.minimum(np.abs(x), 1.0) / (1.0 + y**2)


def _f_sine_product(x, y):
    return np.sin(x * y)


def _f_ball_indicator(x, y):
    return (np.abs(x - y) <= 0.5).astype(float)


_F_FUNCS = {
    "zero": _f_zero,
    "first": _f_first,
    "odd-clip": _f_odd_clip,
    "odd-clip-damped": _f_odd_clip_damped,
    "sine-product": _f_sine_product,
    "ball-indicator": _f_ball_indicator,
}
_PILOT_CENTERED = frozenset({"ball-indicator"})
PILOT_BINS = 512
PILOT_DRAWS = 10**6


@dataclass(frozen=True)
class FSpec:
    """A named bounded aggregating function with its centering data.

    `center_bins is None` means the centering E f(X_0, y) is exactly zero;
    otherwise it is interpolated from a pilot estimate on a bin grid.
    """

    name: str
    bound: float
    center_bins: Optional[np.ndarray] = None
    center_values: Optional[np.ndarray] = None
    center_se: float = 0.0

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return _F_FUNCS[self.name](x, y)

    def center(self, y: np.ndarray) -> np.ndarray:
        if self.center_bins is None:
            return np.zeros_like(np.asarray(y, dtype=float))
        return np.interp(y, self.center_bins, self.center_values)


def make_fspec(
    name: str,
    process: ContractiveChainSpec,
    seed: int = 0,
    pilot_draws: int = PILOT_DRAWS,
) -> FSpec:
    """Resolve a named aggregating function against a chain spec."""
    if name not in _F_FUNCS:
        raise ConfigError(f"unsupported fspec {name!r}; choose from {sorted(_F_FUNCS)}")
    if name == "first":
        bound = process.state_bound()
    else:
        bound = 1.0
    if name not in _PILOT_CENTERED:
        return FSpec(name=name, bound=bound)
    span = process.state_bound()
    bins = np.linspace(-span, span, PILOT_BINS)
    draws = _simulate_chain_columns(
        process, pilot_draws, [derive_seed(seed, 0, AUX_STREAM_SALT)]
    )[:, 0]
    func = _F_FUNCS[name]
    values = np.empty(PILOT_BINS)
    sq = np.empty(PILOT_BINS)
    for i, y in enumerate(bins):
        fv = func(draws, np.full(1, y))
        values[i] = fv.mean()
        sq[i] = fv.var()
    se = float(np.sqrt(sq.max() / pilot_draws))
    return FSpec(name=name, bound=bound, center_bins=bins, center_values=values, center_se=se)


def _deviation_block(args) -> np.ndarray:
    fspec, process, n, t, seed, indices = args
    seeds = [derive_seed(seed, r) for r in indices]
    paths = _simulate_chain_columns(process, n, seeds)
    x_t = paths[t - 1]
    sums = fspec(paths, x_t[None, :]).sum(axis=0)
    return np.abs(sums / n - fspec.center(x_t))


def tail_deviations(
    fspec: FSpec,
    process: ContractiveChainSpec,
    n: int,
    t: int,
    reps: int,
    seed: int,
    workers: int = 1,
) -> np.ndarray:
    """|n^-1 sum_k f(X_k, X_t) - E f(X_0, x)|_{x=X_t}| per replication.

    Replication r always uses derive_seed(seed, r); work is split into fixed
    blocks so the result is identical for any worker count.
    """
    if not 1 <= t <= n:
        raise ValidationError(f"t = {t} must lie in [1, n] = [1, {n}]")
    blocks = [
        (fspec, process, n, t, seed, range(start, min(start + REP_BLOCK, reps)))
        for start in range(0, reps, REP_BLOCK)
    ]
    if workers > 1 and len(blocks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_deviation_block, blocks))
    else:
        parts = [_deviation_block(b) for b in blocks]
    return np.concatenate(parts)


def _tail_from_deviations(devs: np.ndarray, epsilon: float, n: int) -> TailEstimate:
    reps = devs.size
    p_hat = float(np.mean(devs >= epsilon))
    ci = 1.96 * math.sqrt(p_hat * (1.0 - p_hat) / reps)
    return TailEstimate(epsilon=epsilon, n=n, reps=reps, p_hat=p_hat, ci_half_width=ci)


def empirical_tail(
    fspec: FSpec,
    process: ContractiveChainSpec,
    n: int,
    t: int,
    epsilon: float,
    reps: int,
    seed: int,
    workers: int = 1,
) -> TailEstimate:
    """MC estimate of the tail probability at threshold epsilon."""
    if reps < 100:
        raise ValidationError("reps must be >= 100")
    devs = tail_deviations(fspec, process, n, t, reps, seed, workers)
    return _tail_from_deviations(devs, epsilon, n)


def empirical_tail_grid(
    fspec: FSpec,
    process: ContractiveChainSpec,
    n: int,
    t: int,
    epsilons: Sequence[float],
    reps: int,
    seed: int,
    workers: int = 1,
) -> list[TailEstimate]:
    """Tail estimates over an epsilon grid sharing one set of replications."""
    if reps < 100:
        raise ValidationError("reps must be >= 100")
    devs = tail_deviations(fspec, process, n, t, reps, seed, workers)
    return [_tail_from_deviations(devs, float(e), n) for e in epsilons]


def empirical_laplace(
    fspec: FSpec,
    process: ContractiveChainSpec,
    gamma: float,
    A: float,
    t: int,
    reps: int,
    seed: int,
) -> LaplaceEstimate:
    """MC mean of exp(gamma * sum_{k=1..floor(A)} f(X_k, X_t)), centered.

    The interval integral is realized as the discrete sum over k = 1..floor(A).
    Overflow is reported as an infinite value with a flag, never an exception.
    """
    if gamma < 0:
        raise ValidationError("gamma must be >= 0")
    m = int(math.floor(A))
    if m < 1:
        raise ValidationError("A must be >= 1")
    if not 1 <= t <= m:
        raise ValidationError(f"t = {t} must lie in [1, floor(A)] = [1, {m}]")
    if reps < 100:
        raise ValidationError("reps must be >= 100")
    values = np.empty(reps)
    for start in range(0, reps, REP_BLOCK):
        indices = range(start, min(start + REP_BLOCK, reps))
        seeds = [derive_seed(seed, r) for r in indices]
        paths = _simulate_chain_columns(process, m, seeds)
        x_t = paths[t - 1]
        sums = (fspec(paths, x_t[None, :]) - fspec.center(x_t)[None, :]).sum(axis=0)
        with np.errstate(over="ignore"):
            values[indices.start : indices.stop] = np.exp(gamma * sums)
    if not np.all(np.isfinite(values)):
        return LaplaceEstimate(value=math.inf, std_error=math.inf, overflowed=True)
    mean = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0
    return LaplaceEstimate(value=mean, std_error=se, overflowed=False)


def rate_argument(n, epsilon: float, B: float):
    """x_n = eps n / (B log n log log n), the bound's rate argument."""
    n_arr = np.asarray(n, dtype=float)
    if np.any(n_arr < 3):
        raise DomainError("rate argument needs n >= 3")
    return epsilon * n_arr / (B * np.log(n_arr) * np.log(np.log(n_arr)))


def rate_fit(tails: Sequence[TailEstimate], B: float, epsilon: float) -> RateFit:
    """Least-squares fit of -log p_hat against the rate argument x_n.

    Tail points with p_hat in {0, 1} carry no log information and are
    dropped; at least 4 points must remain.
    """
    usable = [te for te in tails if 0.0 < te.p_hat < 1.0]
    if len(usable) < 4:
        raise FitError(f"need >= 4 tail points with 0 < p_hat < 1, have {len(usable)}")
    xs = rate_argument([te.n for te in usable], epsilon, B)
    ys = -np.log([te.p_hat for te in usable])
    slope, intercept = np.polyfit(xs, ys, 1)
    resid = ys - (intercept + slope * xs)
    ss_tot = float(((ys - ys.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot < 1e-30 else 1.0 - float((resid**2).sum()) / ss_tot
    return RateFit(a1_hat=float(np.exp(-intercept)), a2_hat=float(slope), r_squared=r2)


_LOG_GRID = 10.0 ** (np.arange(-64, 129) / 8.0)


def calibrate_corollary(
    tails: Sequence[TailEstimate], B: float, epsilon: float
) -> tuple[BoundParams, RateFit]:
    """Fit a2 from the tails, then pick the smallest log-grid a1 dominating
    every p_hat + CI. Returns bound params (a1, a2 filled in) and the fit."""
    fit = rate_fit(tails, B, epsilon)
    if fit.a2_hat <= 0:
        raise FitError("fitted rate slope is not positive; no decay to calibrate")
    required = max(
        (te.p_hat + te.ci_half_width) * math.exp(fit.a2_hat * float(rate_argument(te.n, epsilon, B)))
        for te in tails
    )
    eligible = _LOG_GRID[_LOG_GRID >= required]
    if eligible.size == 0:
        raise FitError("required a1 exceeds the calibration grid")
    params = BoundParams(a1=float(eligible[0]), a2=fit.a2_hat, B=B, epsilon=epsilon,
                         n=max(te.n for te in tails))
    return params, fit


def calibrate_laplace_constant(
    observed: Sequence[float],
    kappa0: float,
    kappa1: float,
    gamma: float,
    B: float,
    A: float,
) -> float:
    """Smallest log-grid C whose Laplace bound dominates all observed values
    at interval length A (the smallest admissible length)."""
    for c in _LOG_GRID:
        params = BoundParams(kappa0=kappa0, kappa1=kappa1, C=float(c), gamma=gamma, B=B, A=A)
        if laplace_bound(params) >= max(observed):
            return float(c)
    raise FitError("no grid C makes the Laplace bound dominate the estimates")
