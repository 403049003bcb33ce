import math

import numpy as np
import pytest

from config import Config
from initial_data import single_mode
from models import TimeGridMismatch, WeightOverflow, ZeroSteps
from spectral_core import FieldTrajectory, SpectralField, heat_flow, k_tilde_alpha
from stochastic_engine import (LOG_WEIGHT_LIMIT, characteristics_value, estimate_trajectory, generate_batch,
                               girsanov_paths, girsanov_value, integrate_sde, interpolate_periodic,
                               interpolation_error, stencil_points, weight_mean)


def constant_field(values, n=16):
    values = np.asarray(values, dtype=np.float64)
    return SpectralField(values=np.broadcast_to(values[:, None, None], (len(values), n, n)).copy())


@pytest.mark.unit
class TestBrownianBatch:
    def test_same_seed_same_paths(self):
        a = generate_batch(11, 50, 4, 0.01, 2)
        b = generate_batch(11, 50, 4, 0.01, 2)
        np.testing.assert_array_equal(a.increments, b.increments)

    def test_seed_changes_paths(self):
        a = generate_batch(11, 50, 4, 0.01, 2)
        b = generate_batch(12, 50, 4, 0.01, 2)
        assert not np.array_equal(a.increments, b.increments)

    def test_worker_count_does_not_matter(self):
        a = generate_batch(3, 2500, 3, 0.01, 2, workers=1)
        b = generate_batch(3, 2500, 3, 0.01, 2, workers=4)
        np.testing.assert_array_equal(a.increments, b.increments)

    def test_paths_are_addressable(self):
        small = generate_batch(5, 10, 4, 0.01, 3)
        large = generate_batch(5, 40, 4, 0.01, 3)
        np.testing.assert_array_equal(large.increments[:10], small.increments)
        np.testing.assert_array_equal(large.subset(10).increments, small.increments)
        np.testing.assert_array_equal(small.increment(2, 1), small.increments[2, 1])

    def test_zero_steps(self):
        with pytest.raises(ZeroSteps):
            generate_batch(1, 10, 0, 0.01, 2)

    @pytest.mark.parametrize("n_paths, dt", [(0, 0.01), (10, 0.0)])
    def test_invalid_batch(self, n_paths, dt):
        with pytest.raises(ValueError):
            generate_batch(1, n_paths, 3, dt, 2)

    def test_moments(self):
        n_paths, n_steps, dt = 20000, 10, 0.01
        batch = generate_batch(2024, n_paths, n_steps, dt, 2)
        normalized = batch.increments / math.sqrt(dt)
        assert abs(normalized.mean()) <= 4.0 / math.sqrt(normalized.size)
        variance = batch.positions(n_steps).var(axis=0, ddof=1)
        expected = n_steps * dt
        tolerance = 4.0 * expected * math.sqrt(2.0 / (n_paths - 1))
        assert np.all(np.abs(variance - expected) <= tolerance)

    def test_positions_start_at_origin(self):
        batch = generate_batch(1, 5, 3, 0.1, 2)
        np.testing.assert_array_equal(batch.positions(0), np.zeros((5, 2)))
        np.testing.assert_allclose(batch.positions(3), batch.increments.sum(axis=1))


@pytest.mark.unit
class TestInterpolation:
    def test_grid_points_are_exact(self):
        f = single_mode((8, 8), k=(1, 1))
        points = f.grid_points().reshape(2, -1).T
        values = interpolate_periodic(f.values, points, 1.0)
        np.testing.assert_allclose(values[:, 0], f.values.reshape(-1), atol=1e-14)

    def test_periodic_wrap(self):
        f = single_mode((8, 8), k=(1, 1))
        points = np.array([[0.3, 0.7]])
        shifted = points + np.array([[2.0, -3.0]])
        np.testing.assert_allclose(interpolate_periodic(f.values, shifted, 1.0),
                                   interpolate_periodic(f.values, points, 1.0), atol=1e-13)

    def test_midpoint_is_average(self):
        values = np.zeros((1, 4, 4))
        values[0, 1, 0] = 2.0
        result = interpolate_periodic(values, np.array([[0.375, 0.0]]), 1.0)
        assert result[0, 0] == pytest.approx(1.0)

    def test_interpolation_error_is_second_order(self):
        coarse = interpolation_error(single_mode((16, 16)))
        fine = interpolation_error(single_mode((32, 32)))
        assert coarse / fine == pytest.approx(4.0, rel=0.05)


@pytest.mark.unit
class TestIntegrateSde:
    def test_no_noise_no_drift(self):
        batch = generate_batch(1, 8, 5, 0.1, 2)
        state = integrate_sde(batch, None, 0.0, np.array([0.25, 0.5]), 0.0, 0.5)
        np.testing.assert_allclose(state.positions, np.tile([0.25, 0.5], (1, 8, 1)))

    def test_constant_drift_is_transport(self):
        times = np.arange(6) * 0.1
        drift = FieldTrajectory.constant(constant_field([0.3, -0.2]), times)
        batch = generate_batch(1, 4, 5, 0.1, 2)
        state = integrate_sde(batch, drift, 0.0, np.array([0.5, 0.5]), 0.0, 0.5)
        np.testing.assert_allclose(state.displacement, np.tile([-0.15, 0.1], (1, 4, 1)), atol=1e-12)
        assert state.time_index == 5

    def test_displacement_variance(self):
        nu, n_paths = 0.05, 20000
        batch = generate_batch(7, n_paths, 10, 0.01, 2)
        state = integrate_sde(batch, None, nu, np.zeros(2), 0.0, 0.1)
        variance = state.displacement[0].var(axis=0, ddof=1)
        expected = 2.0 * nu * 0.1
        assert np.all(np.abs(variance - expected) <= 4.0 * expected * math.sqrt(2.0 / (n_paths - 1)))

    def test_interval_must_match_dt(self):
        batch = generate_batch(1, 4, 10, 0.1, 2)
        with pytest.raises(TimeGridMismatch):
            integrate_sde(batch, None, 0.1, np.zeros(2), 0.0, 0.25)
        with pytest.raises(TimeGridMismatch):
            integrate_sde(batch, None, 0.1, np.zeros(2), 0.0, 2.0)

    def test_drift_must_cover_interval(self):
        drift = FieldTrajectory.constant(constant_field([0.1, 0.1]), np.arange(3) * 0.1)
        batch = generate_batch(1, 4, 10, 0.1, 2)
        with pytest.raises(TimeGridMismatch):
            integrate_sde(batch, drift, 0.1, np.zeros(2), 0.0, 0.5, horizon=0.5)


@pytest.mark.unit
class TestGirsanov:
    def test_zero_drift_matches_heat_flow(self):
        nu, T = 0.05, 0.5
        psi = single_mode((32, 32))
        batch = generate_batch(99, 4000, 50, 0.01, 2)
        points = np.array([[0.0, 0.0], [0.25, 0.1], [0.6, 0.9]])
        estimate, stderr = girsanov_value(batch, None, psi, points, 0.0, nu, horizon=T)
        exact = heat_flow(psi, nu, T)
        expected = np.exp(-4.0 * math.pi ** 2 * nu * T) * np.cos(2.0 * math.pi * points[:, 0])
        assert np.all(np.abs(estimate[:, 0] - expected) <= 4.0 * stderr[:, 0] + interpolation_error(exact)
                      + interpolation_error(psi))

    def test_constant_terminal_measures_weights(self):
        nu, T = 0.1, 0.2
        times = np.arange(21) * 0.01
        u = k_tilde_alpha(single_mode((16, 16), k=(1, 1), amplitude=3.0), 0.1)
        h = FieldTrajectory.constant(u * (1.0 / math.sqrt(2.0 * nu)), times)
        batch = generate_batch(5, 4000, 20, 0.01, 2)
        estimate, stderr = girsanov_value(batch, h, constant_field([2.0]), np.array([0.3, 0.4]), 0.0, nu)
        assert isinstance(estimate, float)
        assert abs(estimate - 2.0) <= 4.0 * stderr

    def test_weights_average_to_one(self):
        nu = 0.1
        times = np.arange(11) * 0.01
        u = k_tilde_alpha(single_mode((16, 16), k=(1, 0), amplitude=3.0), 0.1)
        h = FieldTrajectory.constant(u * (1.0 / math.sqrt(2.0 * nu)), times)
        batch = generate_batch(8, 4000, 10, 0.01, 2)
        state = girsanov_paths(batch, h, nu, np.array([[0.1, 0.2], [0.7, 0.4]]), 0.0)
        mean, stderr = weight_mean(state)
        assert np.all(np.abs(mean - 1.0) <= 4.0 * stderr)

    def test_stderr_halves_with_four_times_the_paths(self):
        psi = single_mode((16, 16))
        batch = generate_batch(21, 8000, 10, 0.01, 2)
        x = np.array([0.2, 0.3])
        _, small = girsanov_value(batch.subset(2000), None, psi, x, 0.0, 0.5, horizon=0.1)
        _, large = girsanov_value(batch, None, psi, x, 0.0, 0.5, horizon=0.1)
        assert small / large == pytest.approx(2.0, rel=0.1)

    def test_estimates_respect_max_principle(self):
        nu = 0.1
        psi = single_mode((16, 16), k=(1, 0))
        h = FieldTrajectory.constant(k_tilde_alpha(psi, 0.1) * (1.0 / math.sqrt(2.0 * nu)), np.arange(11) * 0.01)
        batch = generate_batch(31, 2000, 10, 0.01, 2)
        estimate, stderr = girsanov_value(batch, h, psi, stencil_points((16, 16), 1.0, 4), 0.0, nu)
        assert np.all(np.abs(estimate) <= 1.0 + 3.0 * stderr)

    @pytest.mark.slow
    def test_halving_dt_keeps_estimates(self):
        nu = 0.1
        psi = single_mode((16, 16), k=(1, 1))
        h = FieldTrajectory.constant(k_tilde_alpha(psi, 0.1) * (1.0 / math.sqrt(2.0 * nu)), np.arange(11) * 0.01)
        points = np.array([[0.1, 0.2], [0.55, 0.7]])
        coarse, coarse_err = girsanov_value(generate_batch(41, 4000, 5, 0.02, 2), h, psi, points, 0.0, nu,
                                            horizon=0.1)
        fine, fine_err = girsanov_value(generate_batch(42, 4000, 10, 0.01, 2), h, psi, points, 0.0, nu,
                                        horizon=0.1)
        spread = np.sqrt(coarse_err ** 2 + fine_err ** 2)
        assert np.all(np.abs(coarse - fine) <= 4.0 * spread + 2.0 * interpolation_error(psi))

    def test_weight_overflow(self):
        times = np.arange(11) * 0.1
        h = FieldTrajectory.constant(constant_field([100.0, 100.0]), times)
        batch = generate_batch(1, 16, 10, 0.1, 2)
        with pytest.raises(WeightOverflow, match=str(LOG_WEIGHT_LIMIT)):
            girsanov_paths(batch, h, 0.1, np.zeros(2), 0.0)

    def test_drift_grid_must_cover_horizon(self):
        h = FieldTrajectory.constant(constant_field([0.1, 0.1]), np.arange(6) * 0.1)
        batch = generate_batch(1, 16, 10, 0.1, 2)
        with pytest.raises(TimeGridMismatch):
            girsanov_value(batch, h, constant_field([1.0]), np.zeros(2), 0.0, 0.1, horizon=1.0)

    def test_chunking_and_workers_do_not_change_estimates(self, monkeypatch):
        psi = single_mode((16, 16), k=(1, 1))
        u = k_tilde_alpha(psi, 0.1)
        h = FieldTrajectory.constant(u * (1.0 / math.sqrt(0.2)), np.arange(11) * 0.01)
        batch = generate_batch(4, 300, 10, 0.01, 2)
        points = stencil_points((16, 16), 1.0, 4)
        reference = girsanov_value(batch, h, psi, points, 0.0, 0.1, workers=1)
        monkeypatch.setattr(Config, 'MC_CHUNK', 3)
        chunked = girsanov_value(batch, h, psi, points, 0.0, 0.1, workers=4)
        np.testing.assert_array_equal(reference[0], chunked[0])
        np.testing.assert_array_equal(reference[1], chunked[1])


@pytest.mark.unit
class TestCharacteristics:
    def test_constant_source_accumulates_exactly(self):
        times = np.arange(11) * 0.02
        source = FieldTrajectory.constant(constant_field([1.5]), times)
        batch = generate_batch(3, 200, 10, 0.02, 2)
        zero = SpectralField.zeros((16, 16))
        estimate, stderr = characteristics_value(batch, None, zero, source, np.array([0.4, 0.4]), 0.0, 0.1)
        assert estimate == pytest.approx(1.5 * 0.2, rel=1e-12)
        assert stderr == pytest.approx(0.0, abs=1e-14)

    def test_agrees_with_girsanov_on_shear_flow(self):
        nu = 0.05
        psi = single_mode((32, 32), k=(1, 0))
        u = k_tilde_alpha(psi, 0.1)
        times = np.arange(21) * 0.01
        drift = FieldTrajectory.constant(u, times)
        h = drift.map(lambda v: v * (1.0 / math.sqrt(2.0 * nu)))
        batch = generate_batch(17, 3000, 20, 0.01, 2)
        points = np.array([[0.1, 0.3], [0.45, 0.8]])
        g, g_err = girsanov_value(batch, h, psi, points, 0.0, nu)
        c, c_err = characteristics_value(batch, drift, psi, None, points, 0.0, nu)
        expected = math.exp(-4.0 * math.pi ** 2 * nu * 0.2) * np.cos(2.0 * math.pi * points[:, 0])
        bias = 2.0 * interpolation_error(psi)
        assert np.all(np.abs(c[:, 0] - expected) <= 4.0 * c_err[:, 0] + bias)
        assert np.all(np.abs(g[:, 0] - expected) <= 4.0 * g_err[:, 0] + bias)


@pytest.mark.unit
class TestStencilEstimates:
    def test_stencil_points(self):
        points = stencil_points((8, 8), 1.0, 4)
        np.testing.assert_allclose(points, [[0.0, 0.0], [0.0, 0.5], [0.5, 0.0], [0.5, 0.5]])
        with pytest.raises(ValueError):
            stencil_points((8, 8), 1.0, 3)

    def test_first_slice_is_terminal(self):
        psi = single_mode((16, 16))
        batch = generate_batch(1, 100, 5, 0.02, 2)
        estimate = estimate_trajectory(batch, psi, np.arange(6) * 0.02, 0.05, stride=2)
        assert estimate.estimates.shape == (6, 1, 8, 8)
        np.testing.assert_array_equal(estimate.estimates[0], psi.values[:, ::2, ::2])
        assert estimate.stderr[0].max() == 0.0
        assert estimate.max_stderr > 0.0

    def test_trajectory_returns_full_grid(self):
        psi = single_mode((16, 16))
        batch = generate_batch(1, 100, 5, 0.02, 2)
        estimate = estimate_trajectory(batch, psi, np.arange(6) * 0.02, 0.05, stride=2)
        trajectory = estimate.trajectory((16, 16), 1.0, mean_zero=True)
        assert trajectory[0].grid_shape == (16, 16)
        np.testing.assert_allclose(trajectory[0].values, psi.values, atol=1e-12)

    def test_girsanov_has_no_source(self):
        psi = single_mode((8, 8))
        batch = generate_batch(1, 10, 2, 0.1, 2)
        source = FieldTrajectory.constant(psi, np.arange(3) * 0.1)
        with pytest.raises(ValueError):
            estimate_trajectory(batch, psi, np.arange(3) * 0.1, 0.1, source=source)

    def test_unknown_estimator(self):
        psi = single_mode((8, 8))
        batch = generate_batch(1, 10, 2, 0.1, 2)
        with pytest.raises(ValueError):
            estimate_trajectory(batch, psi, np.arange(3) * 0.1, 0.1, estimator="antithetic")
