import math

import numpy as np
import pytest

from conftest import relative_sup
from initial_data import divergence_free_single_mode, random_band_field, single_mode
from models import AlphaModelParams, CFLViolation, NonZeroMean, NotDivergenceFree, TruncationWarning
from oracle import (MAX_CFL, IntegratingFactorStepper, advance_linear_transport, mild_residual,
                    oracle_mild_nd, oracle_vorticity_2d, substeps_for)
from spectral_core import (FieldTrajectory, SpectralField, divergence_defect_spectral, fourier_resample, gradient,
                           heat_flow, lp_norm)


@pytest.mark.unit
class TestSubsteps:
    def test_slow_flow_needs_one_step(self):
        assert substeps_for(0.1, 0.0, 0.01) == 1

    def test_substeps_bound_cfl(self):
        n = substeps_for(0.1, 2.97, 0.01)
        assert 0.1 / n * 2.97 / 0.01 <= MAX_CFL
        assert 0.1 / (n - 1) * 2.97 / 0.01 > MAX_CFL

    @pytest.mark.parametrize("speed", [math.inf, math.nan, 1e6])
    def test_violation(self, speed):
        with pytest.raises(CFLViolation):
            substeps_for(1.0, speed, 1e-3)


@pytest.mark.unit
class TestIntegratingFactorStepper:
    def test_linear_part_is_exact(self):
        psi = random_band_field((16, 16), seed=1)
        zero = lambda q, t: SpectralField.zeros(q.grid_shape, q.box_length)
        stepper = IntegratingFactorStepper(psi, 0.1, zero)
        expected = heat_flow(psi, 0.1, 0.05).values
        np.testing.assert_allclose(stepper.step_rk4(psi, 0.0, 0.05).values, expected, atol=1e-14)
        np.testing.assert_allclose(stepper.step_rk2(psi, 0.0, 0.05).values, expected, atol=1e-14)


@pytest.mark.unit
class TestLinearTransport:
    def test_constant_source_without_velocity(self):
        q0 = SpectralField.zeros((8, 8))
        source = FieldTrajectory.constant(SpectralField(values=np.full((1, 8, 8), 2.0)), np.arange(6) * 0.1)
        trajectory = advance_linear_transport(q0, None, 0.1, 0.1, 5, source=source)
        np.testing.assert_allclose(trajectory[-1].values, 1.0, atol=1e-12)

    def test_parallel_velocity_gives_heat_flow(self):
        psi = single_mode((16, 16), k=(1, 0))
        u = SpectralField(values=np.stack([np.zeros((16, 16)), np.ones((16, 16))]))
        velocity = FieldTrajectory.constant(u, np.arange(5) * 0.05)
        trajectory = advance_linear_transport(psi, velocity, 0.05, 0.05, 4)
        expected = heat_flow(psi, 0.05, 0.2)
        assert relative_sup(trajectory[-1].values, expected.values) <= 1e-12


@pytest.mark.unit
class TestVorticityOracle:
    def test_single_mode_decays_exactly(self, params_2d):
        psi = single_mode((32, 32))
        run = oracle_vorticity_2d(psi, params_2d, 0.01, 20)
        decay = math.exp(-4.0 * math.pi ** 2 * params_2d.nu * params_2d.T)
        assert relative_sup(run.final.values, decay * psi.values) <= 1e-8
        assert run.scheme == "IF-RK4"

    def test_mean_and_energy_conserved_without_viscosity(self):
        psi = random_band_field((32, 32), band=3, seed=2)
        params = AlphaModelParams(nu=1e-12, alpha=0.05, T=0.05)
        run = oracle_vorticity_2d(psi, params, 0.005, 10)
        assert max(abs(m) for m in run.means) <= 1e-12
        assert abs(run.l2_norms[-1] - run.l2_norms[0]) <= 1e-6 * run.l2_norms[0]

    def test_energy_decays_with_viscosity(self, params_2d):
        psi = random_band_field((16, 16), seed=3)
        run = oracle_vorticity_2d(psi, params_2d, 0.01, 10)
        assert all(b <= a * (1.0 + 1e-12) for a, b in zip(run.l2_norms, run.l2_norms[1:]))

    def test_strong_flow_is_substepped(self, params_2d):
        psi = single_mode((16, 16), amplitude=2000.0)
        run = oracle_vorticity_2d(psi, params_2d, 0.01, 2)
        assert run.n_substeps[0] > 1
        assert run.max_cfl <= MAX_CFL

    def test_norms_table(self, params_2d):
        run = oracle_vorticity_2d(single_mode((16, 16)), params_2d, 0.05, 4)
        table = run.norms_table()
        assert [row['step'] for row in table] == [0, 1, 2, 3, 4]
        assert table[-1]['t'] == pytest.approx(0.2)

    def test_grid_refinement_changes_little(self):
        params = AlphaModelParams(nu=0.05, alpha=0.1, T=0.1)
        coarse = random_band_field((32, 32), band=1, seed=8)
        fine = fourier_resample(coarse, (64, 64))
        a = oracle_vorticity_2d(coarse, params, 0.01, 10)
        b = oracle_vorticity_2d(fine, params, 0.01, 10)
        assert a.n_substeps == b.n_substeps
        refined = fourier_resample(a.final, (64, 64))
        assert lp_norm(refined - b.final) <= 1e-6 * lp_norm(b.final)

    @pytest.mark.slow
    def test_time_refinement_is_fourth_order(self):
        params = AlphaModelParams(nu=0.01, alpha=0.1, T=0.2)
        psi = random_band_field((32, 32), band=2, seed=9)
        finals = []
        for dt, n_steps in ((0.02, 10), (0.01, 20), (0.005, 40)):
            run = oracle_vorticity_2d(psi, params, dt, n_steps)
            assert max(run.n_substeps) == 1
            finals.append(run.final)
        coarse_gap = lp_norm(finals[0] - finals[1])
        fine_gap = lp_norm(finals[1] - finals[2])
        assert math.log2(coarse_gap / fine_gap) >= 3.5

    def test_rejects_mean(self, params_2d):
        with pytest.raises(NonZeroMean):
            oracle_vorticity_2d(SpectralField(values=np.ones((1, 8, 8))), params_2d, 0.01, 1)


@pytest.mark.unit
class TestMildOracle:
    def test_zero_momentum_stays_zero(self, params_3d):
        m0 = SpectralField.zeros((8, 8, 8), n_components=3)
        run = oracle_mild_nd(m0, params_3d, 0.01, 3)
        assert lp_norm(run.final) == 0.0

    def test_linear_run_is_heat_flow(self, params_3d, random_momentum):
        m0 = random_momentum()
        run = oracle_mild_nd(m0, params_3d, 0.01, 5, nonlinear=False)
        np.testing.assert_allclose(run.final.values, heat_flow(m0, params_3d.nu, 0.05).values, atol=1e-14)
        assert run.scheme == "exact heat"

    @pytest.mark.parametrize("leray_alpha", [False, True])
    def test_shear_mode_is_steady_for_the_nonlinearity(self, params_3d, leray_alpha):
        m0 = divergence_free_single_mode((8, 8, 8))
        run = oracle_mild_nd(m0, params_3d, 0.01, 5, leray_alpha=leray_alpha)
        expected = heat_flow(m0, params_3d.nu, 0.05)
        assert relative_sup(run.final.values, expected.values) <= 1e-8
        assert mild_residual(run.trajectory, params_3d, leray_alpha) <= 1e-10

    def test_output_is_divergence_free(self, params_3d, random_momentum):
        run = oracle_mild_nd(random_momentum(amplitude=0.5), params_3d, 0.01, 3)
        assert all(divergence_defect_spectral(m) <= 1e-10 for m in run.trajectory.slices)

    def test_shell_tolerance(self, params_3d, random_momentum):
        with pytest.raises(TruncationWarning):
            oracle_mild_nd(random_momentum(), params_3d, 0.01, 2, shell_tolerance=1e-6)

    def test_rejects_compressible_data(self, params_3d):
        m0 = gradient(random_band_field((8, 8, 8), seed=4))
        with pytest.raises(NotDivergenceFree):
            oracle_mild_nd(m0, params_3d, 0.01, 1)

    @pytest.mark.slow
    def test_mild_residual_is_second_order(self, params_3d, random_momentum):
        m0 = random_momentum(amplitude=0.5)
        coarse = mild_residual(oracle_mild_nd(m0, params_3d, 0.01, 5).trajectory, params_3d)
        fine = mild_residual(oracle_mild_nd(m0, params_3d, 0.005, 10).trajectory, params_3d)
        assert fine <= 1e-2
        assert coarse / fine > 2.5
