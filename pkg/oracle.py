"""
Deterministic pseudo-spectral reference solvers.

Stiff viscosity is integrated exactly per Fourier mode; the dealiased
nonlinear part is advanced explicitly, substepping so the advective CFL
number never exceeds MAX_CFL.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from initial_data import shell_energy_fraction
from models import AlphaModelParams, CFLViolation, TruncationWarning
from spectral_core import (FieldTrajectory, SpectralField, advection, assemble_J, check_divergence_free,
                           check_mean_zero, dealias, heat_flow, helmholtz_inverse, k_tilde_alpha,
                           leray_project, lp_norm, sup_norm, wavenumber_squared)

logger = logging.getLogger(__name__)

MAX_CFL = 0.5
MAX_SUBSTEPS = 4096

Nonlinear = Callable[[SpectralField, float], SpectralField]


@dataclass
class OracleRun:
    trajectory: FieldTrajectory
    scheme: str
    dt: float
    dealiased: bool = True
    n_substeps: List[int] = field(default_factory=list)
    max_cfl: float = 0.0
    means: List[float] = field(default_factory=list)
    l2_norms: List[float] = field(default_factory=list)
    shell_fractions: List[float] = field(default_factory=list)

    @property
    def final(self) -> SpectralField:
        return self.trajectory[-1]

    def norms_table(self) -> List[Dict[str, float]]:
        rows = []
        for i, t in enumerate(self.trajectory.times):
            row = {'step': i, 't': float(t), 'mean': self.means[i], 'l2': self.l2_norms[i]}
            if self.shell_fractions:
                row['shell_fraction'] = self.shell_fractions[i]
            rows.append(row)
        return rows


class IntegratingFactorStepper:
    """
    Explicit Runge-Kutta on dq/dt = nu Lap q + N(q, t) after factoring out
    exp(t nu Lap), which is diagonal in Fourier space.
    """

    def __init__(self, template: SpectralField, nu: float, nonlinear: Nonlinear):
        self.template = template
        self.nonlinear = nonlinear
        self._lin_op = -nu * wavenumber_squared(template.grid_shape, template.box_length)
        self._h = None
        self._EL = None
        self._EL2 = None

    def update_coeffs(self, h: float) -> None:
        if h != self._h:
            self._h = h
            self._EL = np.exp(h * self._lin_op)
            self._EL2 = np.exp(h * self._lin_op / 2.0)

    def _field(self, coeffs: np.ndarray) -> SpectralField:
        return SpectralField(coeffs=coeffs, box_length=self.template.box_length,
                             mean_zero=self.template.mean_zero)

    def _N(self, coeffs: np.ndarray, t: float) -> np.ndarray:
        return self.nonlinear(self._field(coeffs), t).coeffs

    def step_rk2(self, q: SpectralField, t: float, h: float) -> SpectralField:
        """Heun's method in the integrating-factor frame."""
        self.update_coeffs(h)
        u = q.coeffs
        k1 = self._N(u, t)
        predictor = self._EL * (u + h * k1)
        k2 = self._N(predictor, t + h)
        return self._field(self._EL * u + h / 2.0 * (self._EL * k1 + k2))

    def step_rk4(self, q: SpectralField, t: float, h: float) -> SpectralField:
        """Classical fourth-order Lawson step."""
        self.update_coeffs(h)
        u = q.coeffs
        k1 = self._N(u, t)
        k2 = self._N(self._EL2 * u + h * self._EL2 * k1 / 2.0, t + h / 2.0)
        k3 = self._N(self._EL2 * u + h * k2 / 2.0, t + h / 2.0)
        k4 = self._N(self._EL * u + h * self._EL2 * k3, t + h)
        return self._field(self._EL * u + h * (self._EL * k1 / 6.0 + self._EL2 * k2 / 3.0
                                              + self._EL2 * k3 / 3.0 + k4 / 6.0))


def _grid_spacing(f: SpectralField) -> float:
    return f.box_length / max(f.grid_shape)


def substeps_for(dt: float, max_speed: float, h: float) -> int:
    """Smallest substep count keeping dt_sub * max|u| / h <= MAX_CFL."""
    if not math.isfinite(max_speed):
        raise CFLViolation(f"Velocity is not finite (max |u| = {max_speed})")
    n = max(1, math.ceil(dt * max_speed / (MAX_CFL * h) - 1e-12))
    if n > MAX_SUBSTEPS:
        raise CFLViolation(f"CFL limit needs {n} substeps for dt={dt} (max |u| = {max_speed:.3e}, h = {h:.3e})")
    return n


def _time_grid(dt: float, n_steps: int) -> np.ndarray:
    return np.arange(n_steps + 1) * dt


def advance_linear_transport(q0: SpectralField, velocity: Optional[FieldTrajectory], nu: float, dt: float,
                             n_steps: int, source: Optional[FieldTrajectory] = None) -> FieldTrajectory:
    """
    Frozen-coefficient solve of d_t q + b . grad q = nu Lap q + s, q(0) = q0.

    The coefficients b and s are read at the stage times by linear
    interpolation on their own time grids. Integrating-factor RK2 with CFL
    substepping.

    Returns:
        Trajectory with slices at k * dt, k = 0..n_steps
    """
    def rhs(q: SpectralField, t: float) -> SpectralField:
        out = None
        if velocity is not None:
            out = -advection(velocity.interpolated(t), q)
        if source is not None:
            s = source.interpolated(t)
            out = s if out is None else out + s
        if out is None:
            return SpectralField.zeros(q.grid_shape, q.box_length, q.n_components)
        return out

    stepper = IntegratingFactorStepper(q0, nu, rhs)
    h_grid = _grid_spacing(q0)
    slices = [q0]
    q = q0
    for i in range(n_steps):
        t = i * dt
        speed = 0.0
        if velocity is not None:
            speed = max(sup_norm(velocity.interpolated(t)), sup_norm(velocity.interpolated(t + dt)))
        n_sub = substeps_for(dt, speed, h_grid)
        h = dt / n_sub
        for j in range(n_sub):
            q = stepper.step_rk2(q, t + j * h, h)
        slices.append(q.with_flags(mean_zero=q0.mean_zero and source is None))
    return FieldTrajectory(times=_time_grid(dt, n_steps), slices=slices)


def oracle_vorticity_2d(psi: SpectralField, params: AlphaModelParams, dt: float, n_steps: int) -> OracleRun:
    """
    Reference solution of d_t q - nu Lap q + u . grad q = 0 with
    u = K~alpha(q) recomputed at every Runge-Kutta stage.

    Raises:
        NonZeroMean: If psi has a mean component
        CFLViolation: If the velocity blows up or needs too many substeps
    """
    check_mean_zero(psi)
    psi = psi.with_flags(mean_zero=True)

    def rhs(q: SpectralField, t: float) -> SpectralField:
        return (-advection(k_tilde_alpha(q, params.alpha), q)).remove_mean()

    stepper = IntegratingFactorStepper(psi, params.nu, rhs)
    h_grid = _grid_spacing(psi)
    run = OracleRun(trajectory=None, scheme="IF-RK4", dt=dt)
    slices = [psi]
    run.means.append(float(psi.mean()[0]))
    run.l2_norms.append(lp_norm(psi))
    q = psi
    for i in range(n_steps):
        speed = sup_norm(k_tilde_alpha(q, params.alpha))
        n_sub = substeps_for(dt, speed, h_grid)
        h = dt / n_sub
        run.n_substeps.append(n_sub)
        run.max_cfl = max(run.max_cfl, h * speed / h_grid)
        for j in range(n_sub):
            q = stepper.step_rk4(q, i * dt + j * h, h)
        q = q.with_flags(mean_zero=True)
        slices.append(q)
        run.means.append(float(q.mean()[0]))
        run.l2_norms.append(lp_norm(q))
        logger.debug(f"oracle2d step {i + 1}/{n_steps}: substeps={n_sub} |q|_2={run.l2_norms[-1]:.6e}")
    run.trajectory = FieldTrajectory(times=_time_grid(dt, n_steps), slices=slices)
    logger.info(f"2D oracle finished: {n_steps} steps, max CFL {run.max_cfl:.3f}")
    return run


def momentum_tendency(m: SpectralField, alpha: float, leray_alpha: bool = False) -> SpectralField:
    """P(u . grad m - J_u) with u = (I - a^2 Lap)^{-1} m."""
    u = helmholtz_inverse(dealias(m), alpha)
    return leray_project(advection(u, m) - assemble_J(m, alpha, leray_alpha=leray_alpha))


def _check_shell(m: SpectralField, tolerance: Optional[float], label: str) -> float:
    fraction = shell_energy_fraction(m)
    if tolerance is not None and fraction > tolerance:
        raise TruncationWarning(f"{label}: boundary-shell energy fraction {fraction:.3e} exceeds {tolerance:.1e}; "
                                f"enlarge the box or shorten the horizon")
    return fraction


def oracle_mild_nd(m0: SpectralField, params: AlphaModelParams, dt: float, n_steps: int,
                   leray_alpha: bool = False, nonlinear: bool = True,
                   shell_tolerance: Optional[float] = None) -> OracleRun:
    """
    Exponential-integrator solution of the momentum equation in mild form,
    m(t) = e^{t nu Lap} m0 - int_0^t e^{(t-s) nu Lap} P(u . grad m - J_u)(s) ds.

    Args:
        leray_alpha: Assemble J without the a^2 (grad u)^T Lap u term
        nonlinear: False drops the whole integral (pure heat flow)
        shell_tolerance: Abort when the boundary-shell energy fraction exceeds it

    Raises:
        NotDivergenceFree: If m0 is not divergence-free
        CFLViolation: If the velocity blows up or needs too many substeps
        TruncationWarning: If energy reaches the boundary shell
    """
    check_divergence_free(m0)
    m0 = m0.with_flags(mean_zero=True, divergence_free=True)
    alpha = params.alpha

    def rhs(m: SpectralField, t: float) -> SpectralField:
        if not nonlinear:
            return SpectralField.zeros(m.grid_shape, m.box_length, m.n_components)
        return -momentum_tendency(m.with_flags(divergence_free=True), alpha, leray_alpha)

    stepper = IntegratingFactorStepper(m0, params.nu, rhs)
    h_grid = _grid_spacing(m0)
    scheme = "IF-RK4" if nonlinear else "exact heat"
    run = OracleRun(trajectory=None, scheme=scheme, dt=dt)
    slices = [m0]
    run.means.append(float(np.max(np.abs(m0.mean()))))
    run.l2_norms.append(lp_norm(m0))
    run.shell_fractions.append(_check_shell(m0, shell_tolerance, "initial momentum"))
    m = m0
    for i in range(n_steps):
        if nonlinear:
            speed = sup_norm(helmholtz_inverse(m, alpha))
            n_sub = substeps_for(dt, speed, h_grid)
            h = dt / n_sub
            run.max_cfl = max(run.max_cfl, h * speed / h_grid)
            for j in range(n_sub):
                m = leray_project(stepper.step_rk4(m, i * dt + j * h, h))
        else:
            n_sub = 1
            m = heat_flow(m0, params.nu, (i + 1) * dt)
        run.n_substeps.append(n_sub)
        m = m.with_flags(mean_zero=True, divergence_free=True)
        slices.append(m)
        run.means.append(float(np.max(np.abs(m.mean()))))
        run.l2_norms.append(lp_norm(m))
        run.shell_fractions.append(_check_shell(m, shell_tolerance, f"step {i + 1}"))
    run.trajectory = FieldTrajectory(times=_time_grid(dt, n_steps), slices=slices)
    logger.info(f"Mild-form oracle finished: {n_steps} steps, scheme {scheme}, "
                f"leray_alpha={leray_alpha}, max CFL {run.max_cfl:.3f}")
    return run


def mild_residual(trajectory: FieldTrajectory, params: AlphaModelParams, leray_alpha: bool = False) -> float:
    """
    sup_t ||m(t) - e^{t nu Lap} m(0) + int_0^t e^{(t-s) nu Lap} F(s) ds||_2 / sup_t ||m(t)||_2
    with F = P(u . grad m - J_u) and the Duhamel integral by the trapezoidal rule.
    """
    m0 = trajectory[0]
    dt = trajectory.dt
    scale = trajectory.sup(lp_norm)
    if scale == 0.0:
        return 0.0
    tendencies = [momentum_tendency(m.with_flags(divergence_free=True), params.alpha, leray_alpha)
                  for m in trajectory.slices]
    integral = SpectralField.zeros(m0.grid_shape, m0.box_length, m0.n_components)
    worst = 0.0
    for i in range(1, len(trajectory)):
        # I_i = E I_{i-1} + dt/2 (E F_{i-1} + F_i), E = e^{dt nu Lap}
        integral = heat_flow(integral + tendencies[i - 1] * (dt / 2.0), params.nu, dt) + tendencies[i] * (dt / 2.0)
        mild = heat_flow(m0, params.nu, float(trajectory.times[i])) - integral
        worst = max(worst, lp_norm(trajectory[i] - mild))
    return worst / scale
