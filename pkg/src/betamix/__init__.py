"""Exact mixing coefficients, exponential deviation bounds, and functional
kernel regression, with seeded simulators and an experiment CLI."""

__version__ = "0.1.0"

from .concentration import (
    BoundParams,
    FSpec,
    LaplaceEstimate,
    MomentInputs,
    RateFit,
    TailEstimate,
    TruncationTriple,
    calibrate_corollary,
    calibrate_laplace_constant,
    corollary_bound,
    empirical_laplace,
    empirical_tail,
    empirical_tail_grid,
    laplace_bound,
    make_fspec,
    rate_argument,
    rate_fit,
    truncate,
    unbounded_bound,
)
from .mixing import (
    CheckResult,
    FiniteChain,
    FiniteJointDistribution,
    MixingDecayFit,
    alpha_exact,
    beta_exact,
    davydov_check,
    fit_geometric_decay,
    ibragimov_check,
    load_chain,
    load_joint,
    markov_beta_lag,
    save_chain,
    save_joint,
)
from .processes import (
    ContractiveChainSpec,
    Far1Spec,
    FunctionalPath,
    PathSample,
    PsiSpec,
    estimate_chain_mixing,
    load_functional_path,
    make_psi,
    make_regression_sample,
    save_functional_path,
    simulate_contractive_chain,
    simulate_far1,
    trapezoid_weights,
    uniform_grid,
)
from .regression import (
    BandwidthChoice,
    ForecastSummary,
    KernelSpec,
    NWEvaluation,
    RegressionFit,
    SmallBallModel,
    bandwidth_schedule,
    dynamic_forecast_experiment,
    estimate_small_ball,
    hilbert_norm,
    kernel_spec,
    m_constant,
    nadaraya_watson,
)

__all__ = [name for name in dir() if not name.startswith("_")]
