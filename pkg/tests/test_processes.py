import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from betamix.errors import ConfigError, ValidationError
from betamix.mixing import FiniteJointDistribution, beta_exact
from betamix.processes import (
    ContractiveChainSpec,
    Far1Spec,
    FunctionalPath,
    PsiSpec,
    _simulate_chain_columns,
    binned_lag_joint,
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


def halving_spec(**kw):
    return ContractiveChainSpec(map="linear", a=0.5, innovation="none", burn_in=0, x0=1.0, **kw)


class TestContractiveChain:
    def test_deterministic_contraction_is_exact(self):
        path = simulate_contractive_chain(halving_spec(), 12, seed=0)
        assert_array_equal(path.values, 2.0 ** -np.arange(12))

    def test_stationary_variance_matches_ar1_formula(self):
        spec = ContractiveChainSpec(map="linear", a=0.5, innovation="uniform", halfwidth=1.0)
        n = 100_000
        values = simulate_contractive_chain(spec, n, seed=2024).values
        target = (1.0 / 3.0) / (1.0 - 0.25)
        se = target * np.sqrt(2.0 / n * (1 + 0.25) / (1 - 0.25))
        assert abs(values.var() - target) < 3 * se

    def test_same_seed_identical_nearby_seed_differs(self):
        spec = ContractiveChainSpec(a=0.4, burn_in=5)
        a = simulate_contractive_chain(spec, 50, seed=99).values
        b = simulate_contractive_chain(spec, 50, seed=99).values
        c = simulate_contractive_chain(spec, 50, seed=100).values
        assert_array_equal(a, b)
        assert np.any(a[:10] != c[:10])

    @pytest.mark.parametrize("map_name", ["linear", "clipped-linear", "sine-perturbed"])
    def test_batch_columns_match_single_paths(self, map_name):
        spec = ContractiveChainSpec(
            map=map_name, a=0.45, b=0.3 if map_name == "sine-perturbed" else 0.0,
            innovation="truncated-gaussian", sigma=0.5, trunc=1.5, burn_in=7,
        )
        seeds = [5, 6, 11]
        batch = _simulate_chain_columns(spec, 40, seeds)
        for j, s in enumerate(seeds):
            assert_array_equal(batch[:, j], simulate_contractive_chain(spec, 40, s).values)

    def test_half_means_agree_under_stationarity(self):
        spec = ContractiveChainSpec(map="linear", a=0.5, innovation="uniform", burn_in=1000)
        values = simulate_contractive_chain(spec, 100_000, seed=7).values
        half = len(values) // 2
        var_mean = (1.0 / 3.0) / (1 - 0.5) ** 2 / half
        combined_se = np.sqrt(2 * var_mean)
        assert abs(values[:half].mean() - values[half:].mean()) < 4 * combined_se

    def test_binned_beta_proxy_decays_log_linearly(self):
        spec = ContractiveChainSpec(map="linear", a=0.5, innovation="uniform", burn_in=1000)
        fit = estimate_chain_mixing(spec, seed=31)
        assert fit.r_squared > 0.95
        assert fit.kappa1 > 0.1

    def test_binned_lag_joint_is_a_distribution(self):
        spec = ContractiveChainSpec(map="linear", a=0.5, innovation="uniform", burn_in=100)
        values = simulate_contractive_chain(spec, 20_000, seed=3).values
        table = binned_lag_joint(values, lag=2, n_bins=8)
        j = FiniteJointDistribution(table)
        assert beta_exact(j) <= 1.0

    def test_unsupported_names_rejected(self):
        with pytest.raises(ConfigError):
            ContractiveChainSpec(map="cubic")
        with pytest.raises(ConfigError):
            ContractiveChainSpec(innovation="cauchy")
        with pytest.raises(ConfigError):
            ContractiveChainSpec(map="linear", a=1.0)
        with pytest.raises(ConfigError):
            ContractiveChainSpec(map="sine-perturbed", a=0.7, b=0.4)


class TestFar1:
    def test_eigenfunction_iteration(self):
        spec = Far1Spec(kernel="separable", rho=0.5, noise_scale=0.0, burn_in=0,
                        initial="eigenfunction")
        path = simulate_far1(spec, 10, grid_size=32, seed=0)
        phi = spec.eigenfunction(path.grid)
        for k in range(10):
            assert_allclose(path.curves[k], 0.5**k * phi, atol=1e-9)

    def test_zero_rho_gives_uncorrelated_scores(self):
        spec = Far1Spec(kernel="separable", rho=0.0, noise_scale=0.4, burn_in=50)
        path = simulate_far1(spec, 4000, grid_size=32, seed=5)
        phi = spec.eigenfunction(path.grid)
        w = trapezoid_weights(path.grid)
        scores = path.curves @ (w * phi)
        r = np.corrcoef(scores[:-1], scores[1:])[0, 1]
        assert abs(r) < 3.0 / np.sqrt(len(scores))

    def test_separable_rho_half_reduces_to_scalar_ar1(self):
        spec = Far1Spec(kernel="separable", rho=0.5, noise_scale=0.4, burn_in=100)
        path = simulate_far1(spec, 4000, grid_size=32, seed=17)
        phi = spec.eigenfunction(path.grid)
        w = trapezoid_weights(path.grid)
        scores = path.curves @ (w * phi)
        r = np.corrcoef(scores[:-1], scores[1:])[0, 1]
        se = np.sqrt((1 - 0.25) / len(scores))
        assert abs(r - 0.5) < 3 * se

    def test_gaussian_bump_operator_contracts(self):
        spec = Far1Spec(kernel="gaussian-bump", rho=0.8, bump_width=0.2, noise_scale=0.3)
        path = simulate_far1(spec, 200, grid_size=24, seed=3)
        w = trapezoid_weights(path.grid)
        norms = np.sqrt(path.curves**2 @ w)
        assert np.all(np.isfinite(norms))
        # contraction + bounded noise => norm stays under noise_bound/(1-rho)
        noise_bound = np.sqrt(3) * sum(0.3 / m for m in range(1, 9)) * np.sqrt(2)
        assert norms.max() <= noise_bound / (1 - 0.8)

    def test_contraction_violation_rejected(self):
        with pytest.raises(ConfigError):
            Far1Spec(rho=1.0)

    def test_determinism_in_seed(self):
        spec = Far1Spec(rho=0.3, noise_scale=0.2, burn_in=10)
        a = simulate_far1(spec, 20, 16, seed=8)
        b = simulate_far1(spec, 20, 16, seed=8)
        assert_array_equal(a.curves, b.curves)


class TestRegressionSample:
    def test_linear_psi_without_noise_is_exact_inner_product(self):
        spec = Far1Spec(rho=0.4, noise_scale=0.3, burn_in=20)
        path = simulate_far1(spec, 50, 32, seed=1)
        weight = np.cos(np.pi * path.grid)
        sample = make_regression_sample(path, PsiSpec("linear", weight), 0.0, seed=2)
        w = trapezoid_weights(path.grid)
        assert_array_equal(sample.responses, path.curves @ (w * weight))

    def test_norm_psi_of_unit_constant_curve(self):
        grid = uniform_grid(64)
        path = FunctionalPath(grid=grid, curves=np.ones((3, 64)))
        sample = make_regression_sample(path, PsiSpec("norm"), 0.0, seed=0)
        assert_allclose(sample.responses, 1.0, atol=1e-12)

    def test_noise_variance_recovered(self):
        grid = uniform_grid(16)
        path = FunctionalPath(grid=grid, curves=np.zeros((10_000, 16)))
        sample = make_regression_sample(path, PsiSpec("norm"), 0.3, seed=11)
        resid = sample.responses  # psi(0) = 0
        se = 0.09 * np.sqrt(2.0 / len(resid))
        assert abs(resid.var() - 0.09) < 3 * se

    def test_unsupported_psi_rejected(self):
        with pytest.raises(ConfigError):
            PsiSpec("quadratic")
        with pytest.raises(ConfigError):
            PsiSpec("linear")  # missing weight

    def test_lipschitz_constants(self):
        grid = uniform_grid(32)
        _, l_norm = make_psi(PsiSpec("norm"), grid)
        assert l_norm == 1.0
        weight = 2.0 * np.ones(32)
        _, l_lin = make_psi(PsiSpec("linear", weight), grid)
        assert_allclose(l_lin, 2.0, rtol=1e-12)


class TestFunctionalPathCsv:
    def test_round_trip_with_responses(self, tmp_path):
        spec = Far1Spec(rho=0.25, noise_scale=0.2, burn_in=5)
        path = simulate_far1(spec, 7, 16, seed=42)
        sample = make_regression_sample(path, PsiSpec("norm"), 0.1, seed=43)
        f = tmp_path / "sample.csv"
        save_functional_path(f, sample)
        loaded = load_functional_path(f)
        assert_array_equal(loaded.grid, sample.grid)
        assert_array_equal(loaded.curves, sample.curves)
        assert_array_equal(loaded.responses, sample.responses)

    def test_round_trip_without_responses(self, tmp_path):
        path = FunctionalPath(uniform_grid(8), np.arange(16.0).reshape(2, 8) / 16.0)
        f = tmp_path / "plain.csv"
        save_functional_path(f, path)
        loaded = load_functional_path(f)
        assert loaded.responses is None
        assert_array_equal(loaded.curves, path.curves)

    def test_bad_header_rejected(self, tmp_path):
        f = tmp_path / "bad.csv"
        f.write_text("lattice,0.0,1.0\n0,1.0,2.0\n")
        with pytest.raises(ValidationError):
            load_functional_path(f)


class TestGridValidation:
    def test_bad_endpoints_rejected(self):
        with pytest.raises(ValidationError):
            FunctionalPath(np.linspace(0.0, 0.9, 8), np.zeros((1, 8)))

    def test_non_increasing_grid_rejected(self):
        grid = np.array([0.0, 0.5, 0.5, 1.0])
        with pytest.raises(ValidationError):
            FunctionalPath(grid, np.zeros((1, 4)))
