import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from betamix.errors import ConfigError, DomainError, ValidationError
from betamix.processes import Far1Spec, FunctionalPath, PsiSpec, uniform_grid
from betamix.regression import (
    RegressionFit,
    bandwidth_schedule,
    dynamic_forecast_experiment,
    estimate_small_ball,
    hilbert_norm,
    kernel_spec,
    m_constant,
    nadaraya_watson,
)


def constant_curve_fit(distances, responses, h=1.0, kernel="downslope-linear", ref=None):
    """Training curves that are constants, so L2 distances to the zero curve
    are exactly the given values."""
    grid = uniform_grid(5)
    curves = np.asarray(distances, dtype=float)[:, None] * np.ones((1, 5))
    path = FunctionalPath(grid=grid, curves=curves, responses=np.asarray(responses, float))
    reference = np.asarray(ref, dtype=float)[:, None] * np.ones((1, 5)) if ref is not None \
        else np.linspace(0, 2, 12)[:, None] * np.ones((1, 5))
    return RegressionFit(kernel=kernel_spec(kernel), bandwidth=h, training=path,
                         reference_curves=reference)


ZERO_QUERY = np.zeros(5)


class TestKernels:
    @pytest.mark.parametrize("name", ["uniform", "downslope-linear", "quadratic-decreasing"])
    def test_shape_conditions(self, name):
        k = kernel_spec(name)
        assert k.at_one > 0
        s = np.linspace(0, 1, 100)
        assert np.all(k.derivative(s[:-1]) <= 1e-12)
        assert np.all(k.evaluate(np.array([-0.5, 1.5])) == 0.0)

    def test_values(self):
        k = kernel_spec("downslope-linear")
        assert_allclose(k.evaluate(np.array([0.0, 0.5, 1.0])), [2.0, 1.5, 1.0])
        q = kernel_spec("quadratic-decreasing")
        assert_allclose(q.evaluate(np.array([0.0, 1.0])), [1.5, 1.0])

    def test_unknown_kernel_rejected(self):
        with pytest.raises(ConfigError):
            kernel_spec("gaussian")


class TestHilbertNorm:
    def test_constant_one(self):
        grid = uniform_grid(64)
        assert hilbert_norm(np.ones(64), grid) == pytest.approx(1.0, abs=1e-12)

    def test_zero_curve(self):
        grid = uniform_grid(32)
        assert hilbert_norm(np.zeros(32), grid) == 0.0

    def test_sine_curve(self):
        grid = uniform_grid(256)
        norm = hilbert_norm(np.sin(2 * np.pi * grid), grid)
        assert abs(norm - 1.0 / math.sqrt(2.0)) < 1e-4

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            hilbert_norm(np.ones(8), uniform_grid(16))


class TestNadarayaWatson:
    def test_constant_responses(self):
        fit = constant_curve_fit([0.1, 0.5, 0.9], [3.0, 3.0, 3.0])
        out = nadaraya_watson(fit, ZERO_QUERY)
        assert out.defined
        assert out.psi_hat == pytest.approx(3.0, rel=1e-14)

    def test_single_neighbor(self):
        fit = constant_curve_fit([0.4, 5.0, 7.0], [2.5, -1.0, 4.0])
        out = nadaraya_watson(fit, ZERO_QUERY)
        assert out.n_effective == 1
        assert out.psi_hat == pytest.approx(2.5, rel=1e-14)

    def test_five_point_hand_example(self):
        fit = constant_curve_fit([0.1, 0.2, 0.9, 1.5, 2.0], [1, 2, 3, 4, 5])
        out = nadaraya_watson(fit, ZERO_QUERY)
        assert out.n_effective == 3
        assert abs(out.psi_hat - 8.8 / 4.8) < 1e-12

    def test_undefined_when_no_neighbors(self):
        fit = constant_curve_fit([1.5, 2.0, 3.0], [1.0, 2.0, 3.0])
        out = nadaraya_watson(fit, ZERO_QUERY)
        assert not out.defined
        assert out.psi_hat is None
        assert out.n_effective == 0

    def test_ratio_identity(self):
        rng = np.random.default_rng(3)
        fit = constant_curve_fit(rng.uniform(0, 2, 20), rng.normal(size=20))
        out = nadaraya_watson(fit, ZERO_QUERY)
        assert out.f_hat > 0
        assert out.psi_hat == pytest.approx(out.g_hat / out.f_hat, rel=1e-12)

    def test_convex_combination_bounds(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            d = rng.uniform(0, 2, 15)
            y = rng.normal(size=15)
            out = nadaraya_watson(constant_curve_fit(d, y), ZERO_QUERY)
            if out.defined:
                assert y.min() - 1e-12 <= out.psi_hat <= y.max() + 1e-12

    def test_far_points_do_not_change_estimate(self):
        out1 = nadaraya_watson(constant_curve_fit([0.2, 0.7], [1.0, 5.0]), ZERO_QUERY)
        out2 = nadaraya_watson(
            constant_curve_fit([0.2, 0.7, 1.01, 40.0], [1.0, 5.0, 100.0, -7.0]), ZERO_QUERY
        )
        assert out1.psi_hat == pytest.approx(out2.psi_hat, rel=1e-14)

    def test_affine_equivariance(self):
        rng = np.random.default_rng(7)
        d = rng.uniform(0, 1.5, 10)
        y = rng.normal(size=10)
        base = nadaraya_watson(constant_curve_fit(d, y), ZERO_QUERY).psi_hat
        scaled = nadaraya_watson(constant_curve_fit(d, 3.0 * y + 2.0), ZERO_QUERY).psi_hat
        assert scaled == pytest.approx(3.0 * base + 2.0, rel=1e-12)


class TestSmallBall:
    def test_extreme_bandwidths(self):
        rng = np.random.default_rng(11)
        pts = rng.uniform(-1, 1, size=(200, 3))
        model = estimate_small_ball(np.zeros(3), [0.01, 5.0], pts)
        assert model.f_hat[-1] == 1.0
        assert np.all(np.diff(model.f_hat) >= 0)

    def test_zero_below_minimum_distance(self):
        rng = np.random.default_rng(41)
        pts = rng.uniform(0.5, 1.0, size=(300, 2))  # distances to origin >= 0.5
        model = estimate_small_ball(np.zeros(2), [0.1, 3.0], pts)
        assert model.f_hat[0] == 0.0
        assert model.f_hat[1] == 1.0
        assert model.h_ref == 3.0

    def test_all_zero_grid_rejected(self):
        rng = np.random.default_rng(13)
        pts = 1.0 + rng.uniform(0, 1, size=(150, 2))
        with pytest.raises(DomainError):
            estimate_small_ball(np.zeros(2), [1e-6], pts)

    def test_small_sample_rejected(self):
        with pytest.raises(ValidationError):
            estimate_small_ball(np.zeros(2), [0.5], np.zeros((50, 2)))

    def test_uniform_disk_surrogate(self):
        rng = np.random.default_rng(17)
        m = 20_000
        radii = np.sqrt(rng.random(m))
        angle = rng.uniform(0, 2 * np.pi, m)
        pts = np.column_stack([radii * np.cos(angle), radii * np.sin(angle)])
        model = estimate_small_ball(
            np.zeros(2), [0.1, 0.2, 0.4, 0.8], pts,
            s_grid=[0.25, 0.5, 0.75, 1.0], dimension_d=2,
        )
        for h, f in zip(model.h_grid, model.f_hat):
            se = math.sqrt(h**2 * (1 - h**2) / m)
            assert abs(f - h**2) < 3 * se + 1e-12
        assert model.h_ref == 0.1
        n_ref = model.f_hat[0] * m
        for s, t in zip(model.s_grid[:-1], model.tau_hat[:-1]):
            se = math.sqrt(s**2 * (1 - s**2) / n_ref)
            assert abs(t - s**2) < 3 * se
        assert model.tau_hat[-1] == 1.0

    def test_tau_interpolation_anchored_at_zero(self):
        rng = np.random.default_rng(19)
        pts = rng.uniform(-1, 1, size=(500, 2))
        model = estimate_small_ball(np.zeros(2), [0.5, 1.0], pts)
        assert model.tau(np.array([0.0]))[0] == 0.0
        assert np.all(model.tau(np.linspace(0, 1, 50)) <= 1.0 + 1e-12)


class TestMConstant:
    def test_uniform_kernel_always_one(self):
        k = kernel_spec("uniform")
        for tau in (lambda s: s, lambda s: s**2, lambda s: np.sqrt(s)):
            assert m_constant(k, tau) == pytest.approx(1.0, abs=1e-12)

    def test_downslope_linear_tau_s(self):
        assert m_constant(kernel_spec("downslope-linear"), lambda s: s) == pytest.approx(
            1.5, abs=1e-6
        )

    def test_downslope_linear_tau_s_squared(self):
        assert m_constant(kernel_spec("downslope-linear"), lambda s: s**2) == pytest.approx(
            4.0 / 3.0, abs=1e-6
        )

    def test_m_at_least_k_at_one(self):
        for name in ("uniform", "downslope-linear", "quadratic-decreasing"):
            k = kernel_spec(name)
            for tau in (lambda s: s, lambda s: s**2, lambda s: np.sqrt(s)):
                assert m_constant(k, tau) >= k.at_one

    def test_bad_tau_rejected(self):
        with pytest.raises(ValidationError):
            m_constant(kernel_spec("uniform"), lambda s: 2.0 * s)


class TestBandwidthSchedule:
    def test_tiny_theta_clamps_to_near_max(self):
        rng = np.random.default_rng(23)
        pilot = rng.uniform(0, 3, 5000)
        choice = bandwidth_schedule(1000, 1e-6, pilot)
        assert choice.h >= np.quantile(pilot, 0.99)

    def test_surrogate_level_within_factor_two(self):
        rng = np.random.default_rng(29)
        m = 50_000
        radii = np.sqrt(rng.random(m))  # uniform disk, distances to origin
        n = 10_000
        choice = bandwidth_schedule(n, 0.4, radii)
        f_at_h = np.mean(radii <= choice.h)
        target = n**-0.4
        assert target / 2 <= f_at_h <= 2 * target

    def test_summand_series_converges_by_ratio_test(self):
        theta = 0.4

        def block_sum(j):
            total, chunk = 0.0, 2**21
            for start in range(2**j + 1, 2**(j + 1) + 1, chunk):
                ns = np.arange(start, min(start + chunk, 2**(j + 1) + 1), dtype=float)
                total += np.sum(ns ** (2 * theta - 2) * np.log(ns) ** 2 * np.log(np.log(ns)) ** 2)
            return total

        blocks = [block_sum(j) for j in range(4, 25)]
        ratios = [b / a for a, b in zip(blocks, blocks[1:])]
        # polylog factors push early ratios above 1; the tail settles below
        assert all(r < 1.0 for r in ratios[-4:])
        assert all(b < a for a, b in zip(ratios, ratios[1:]))
        choice = bandwidth_schedule(1024, theta, np.array([1.0]))
        expected = 1024 ** (2 * theta - 2) * math.log(1024) ** 2 * math.log(math.log(1024)) ** 2
        assert choice.summand == pytest.approx(expected, rel=1e-12)

    def test_theta_domain(self):
        with pytest.raises(DomainError):
            bandwidth_schedule(100, 0.6, np.array([1.0]))
        with pytest.raises(DomainError):
            bandwidth_schedule(100, 0.0, np.array([1.0]))


class TestDynamicForecast:
    def test_degenerate_constant_process_has_zero_error(self):
        process = Far1Spec(rho=0.5, noise_scale=0.0, burn_in=10, initial="zero")
        psi = PsiSpec("linear", weight=np.ones(24))
        out = dynamic_forecast_experiment(
            process, psi, noise_sd=0.0, kernel=kernel_spec("downslope-linear"),
            theta=0.3, n_grid=[120, 200], reps=5, seed=1, grid_size=24,
        )
        for summary in out:
            assert summary.median_error == pytest.approx(0.0, abs=1e-12)
            assert summary.undefined_fraction == 0.0

    def test_pipeline_runs_and_is_deterministic(self):
        process = Far1Spec(rho=0.5, noise_scale=0.3, burn_in=100)
        psi = PsiSpec("norm")
        kwargs = dict(
            process=process, psi=psi, noise_sd=0.1,
            kernel=kernel_spec("downslope-linear"), theta=0.3,
            n_grid=[150], reps=20, seed=7, grid_size=24,
        )
        a = dynamic_forecast_experiment(**kwargs)
        b = dynamic_forecast_experiment(**kwargs)
        assert a == b
        assert a[0].undefined_fraction < 0.5
        assert a[0].median_error >= 0.0

    def test_worker_count_invariance(self):
        process = Far1Spec(rho=0.4, noise_scale=0.25, burn_in=50)
        psi = PsiSpec("norm")
        kwargs = dict(
            process=process, psi=psi, noise_sd=0.05,
            kernel=kernel_spec("downslope-linear"), theta=0.25,
            n_grid=[120], reps=60, seed=13, grid_size=16,
        )
        a = dynamic_forecast_experiment(workers=1, **kwargs)
        b = dynamic_forecast_experiment(workers=2, **kwargs)
        assert a == b

    def test_bad_t_rule_rejected(self):
        process = Far1Spec(rho=0.4, noise_scale=0.25, burn_in=10)
        with pytest.raises(ConfigError):
            dynamic_forecast_experiment(
                process, PsiSpec("norm"), 0.1, kernel_spec("uniform"), 0.3,
                n_grid=[120], t_rule="everywhere", reps=2, seed=0, grid_size=16,
            )
