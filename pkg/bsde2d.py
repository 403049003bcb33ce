"""
Picard solver for the 2D vorticity BSDE.

The random pair (Y, Z) is carried by its deterministic skeleton theta:
Y(t, x) = theta(T - t, x + sqrt(2 nu) B_t), Z = sqrt(2 nu) grad theta along the
same shift. Torus translations preserve every spatial norm used below, so all
diagnostics are computed on theta directly.
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import List, Optional, Tuple

import numpy as np

from models import AlphaModelParams, MonteCarloConfig, NoConvergence
from oracle import advance_linear_transport
from spectral_core import (FieldTrajectory, SpectralField, check_mean_zero, gradient, heat_flow,
                           k_tilde_alpha, k_tilde_operator_norm, lp_norm, sup_norm, translate, vorticity)
from stochastic_engine import BrownianBatch, StencilEstimate, estimate_trajectory, generate_batch

logger = logging.getLogger(__name__)

MAX_PRINCIPLE_SLACK = 1e-6


@dataclass
class VorticityIterate:
    theta: FieldTrajectory
    u: FieldTrajectory
    grad_theta: FieldTrajectory
    mc: Optional[StencilEstimate] = None

    @classmethod
    def from_theta(cls, theta: FieldTrajectory, alpha: float,
                   mc: Optional[StencilEstimate] = None) -> "VorticityIterate":
        return cls(theta=theta, u=theta.map(lambda q: k_tilde_alpha(q, alpha)),
                   grad_theta=theta.map(gradient), mc=mc)

    @property
    def times(self) -> np.ndarray:
        return self.theta.times

    @property
    def horizon(self) -> float:
        return self.theta.horizon


@dataclass
class PicardDiagnostics:
    iteration: int
    sup_L2: float
    sup_inf: float
    bmo: float
    beta: float
    delta: Optional[float] = None
    weighted_delta: Optional[float] = None
    ratio: Optional[float] = None
    plain_ratio: Optional[float] = None
    max_principle_ok: bool = True
    bmo_bound: float = math.inf
    nu_outside_regime: bool = False
    mc_max_stderr: Optional[float] = None

    @property
    def bmo_ok(self) -> bool:
        return self.bmo <= self.bmo_bound

    def to_row(self) -> dict:
        row = asdict(self)
        row['bmo_ok'] = self.bmo_ok
        return row


def choose_beta(C1: float, C_alpha: float, nu: float, T: float) -> float:
    """
    Smallest beta with 2 nu - C^2 C1^2 / beta >= nu / 2 and
    C^2 C1^2 (nu + T C^2 C1^2) / (beta nu^2) <= nu / 16.
    """
    c2 = (C_alpha * C1) ** 2
    return max(2.0 * c2 / (3.0 * nu), 16.0 * c2 * (nu + T * c2) / nu ** 3)


def check_beta_conditions(beta: float, C1: float, C_alpha: float, nu: float, T: float,
                          rtol: float = 1e-12) -> Tuple[bool, bool]:
    """Both weighting conditions evaluated by substitution."""
    c2 = (C_alpha * C1) ** 2
    if beta <= 0.0:
        return c2 == 0.0, c2 == 0.0
    first = 2.0 * nu - c2 / beta >= nu / 2.0 * (1.0 - rtol)
    second = c2 * (nu + T * c2) / (beta * nu ** 2) <= nu / 16.0 * (1.0 + rtol)
    return first, second


def bmo_bound(C1: float, C_alpha: float, nu: float, T: float) -> float:
    return (C1 / nu) ** 2 * (nu + T * (C_alpha * C1) ** 2)


def bmo_norm(iterate: VorticityIterate) -> float:
    """int_0^T ||grad theta(r)||_2^2 dr by the trapezoidal rule."""
    if len(iterate.times) < 2:
        return 0.0
    energies = np.array([lp_norm(g) ** 2 for g in iterate.grad_theta.slices])
    return float(np.trapezoid(energies, iterate.times))


def heat_iterate(psi: SpectralField, params: AlphaModelParams, times: np.ndarray) -> VorticityIterate:
    theta = FieldTrajectory(times=times, slices=[psi] + [heat_flow(psi, params.nu, float(t)) for t in times[1:]])
    return VorticityIterate.from_theta(theta, params.alpha)


def linear_bsde_solve(psi: SpectralField, h: FieldTrajectory, params: AlphaModelParams,
                      mc: Optional[MonteCarloConfig] = None, batch: Optional[BrownianBatch] = None
                      ) -> Tuple[FieldTrajectory, Optional[StencilEstimate]]:
    """
    Skeleton of the linear BSDE with frozen drift h and terminal value psi.

    Deterministically this steps d_t theta + h . grad theta = nu Lap theta from
    theta(0) = psi on the time grid of h. With `mc` the closed-form Girsanov
    (or characteristics) expectation is estimated on a stencil instead.
    """
    times = h.times
    dt = float(times[1] - times[0]) if len(times) > 1 else 0.0
    if mc is None:
        theta = advance_linear_transport(psi, h, params.nu, dt, len(times) - 1)
        theta = theta.map(lambda q: q.remove_mean())
        theta.slices[0] = psi
        return theta, None

    if batch is None:
        batch = generate_batch(mc.seed, mc.n_paths, max(1, int(round(h.horizon / mc.dt))), mc.dt, 2)
    estimate = estimate_trajectory(batch, psi, times, params.nu, estimator=mc.estimator, drift=h,
                                   stride=mc.stencil_stride)
    theta = estimate.trajectory(psi.grid_shape, psi.box_length).map(lambda q: q.remove_mean())
    theta.slices[0] = psi
    return theta, estimate


def picard_step_2d(prev: VorticityIterate, psi: SpectralField, params: AlphaModelParams,
                   mc: Optional[MonteCarloConfig] = None, batch: Optional[BrownianBatch] = None) -> VorticityIterate:
    """
    Next Picard iterate: the solution of d_t theta + u_n . grad theta = nu Lap theta,
    theta(0) = psi, with u_n = K~alpha(theta_n) frozen from `prev`.

    Args:
        mc: Estimate theta by Monte Carlo instead of spectral stepping
        batch: Pre-generated Brownian batch for the MC path (built from mc otherwise)

    Raises:
        NonZeroMean: If psi has a mean component
        WeightOverflow: From the Girsanov estimator
    """
    check_mean_zero(psi)
    psi = psi.with_flags(mean_zero=True)
    theta, estimate = linear_bsde_solve(psi, prev.u, params, mc=mc, batch=batch)
    return VorticityIterate.from_theta(theta, params.alpha, mc=estimate)


def _weighted_sup(delta: List[float], times: np.ndarray, beta: float) -> float:
    return float(max(math.exp(-beta * float(t)) * d for t, d in zip(times, delta)))


def picard_solve_2d(psi: SpectralField, params: AlphaModelParams, tol: float = 1e-8, max_iter: int = 20,
                    mc: Optional[MonteCarloConfig] = None, dt: float = 1e-2
                    ) -> Tuple[VorticityIterate, List[PicardDiagnostics]]:
    """
    Picard iteration started from the heat flow of psi.

    Stops when sup_t ||theta_n - theta_{n-1}||_2 < tol, which bounds the
    beta-weighted delta too.

    Returns:
        Final iterate and one diagnostics row per iterate (row 0 is the heat flow)

    Raises:
        NonZeroMean: If psi has a mean component
        NoConvergence: If max_iter is reached while deltas are not contracting
    """
    check_mean_zero(psi)
    psi = psi.with_flags(mean_zero=True)
    n_steps = max(1, int(round(params.T / dt)))
    times = np.arange(n_steps + 1) * dt

    C1 = sup_norm(psi)
    C_alpha = k_tilde_operator_norm(psi.grid_shape, params.alpha, psi.box_length)
    beta = choose_beta(C1, C_alpha, params.nu, params.T)
    bound = bmo_bound(C1, C_alpha, params.nu, params.T)
    outside = params.nu > 2.0
    if outside:
        logger.warning(f"nu={params.nu} > 2: the contraction certificate is outside its stated regime")
    logger.info(f"Picard solve: C1={C1:.4e} C(alpha)={C_alpha:.4e} beta={beta:.4e} "
                f"steps={n_steps} mc={'on' if mc else 'off'}")

    batch = None
    if mc is not None:
        batch = generate_batch(mc.seed, mc.n_paths, max(1, int(round(params.T / mc.dt))), mc.dt, 2)

    def diagnose(n: int, it: VorticityIterate, **extra) -> PicardDiagnostics:
        sup_inf = it.theta.sup(sup_norm)
        row = PicardDiagnostics(iteration=n, sup_L2=it.theta.sup(lp_norm), sup_inf=sup_inf,
                                bmo=bmo_norm(it), beta=beta, bmo_bound=bound, nu_outside_regime=outside,
                                max_principle_ok=sup_inf <= C1 * (1.0 + MAX_PRINCIPLE_SLACK),
                                mc_max_stderr=it.mc.max_stderr if it.mc is not None else None, **extra)
        if not row.max_principle_ok:
            logger.warning(f"Iterate {n}: sup |theta| = {sup_inf:.6e} exceeds |psi|_inf = {C1:.6e}")
        if not row.bmo_ok:
            logger.warning(f"Iterate {n}: BMO {row.bmo:.4e} above bound {bound:.4e}")
        return row

    current = heat_iterate(psi, params, times)
    diagnostics = [diagnose(0, current)]
    for n in range(1, max_iter + 1):
        following = picard_step_2d(current, psi, params, mc=mc, batch=batch)
        deltas = [lp_norm(a - b) for a, b in zip(following.theta.slices, current.theta.slices)]
        delta = max(deltas)
        weighted = _weighted_sup(deltas, times, beta)
        previous = diagnostics[-1]
        ratio = plain_ratio = None
        if n >= 2 and previous.weighted_delta:
            ratio = weighted / previous.weighted_delta
            plain_ratio = delta / previous.delta if previous.delta else None
        diagnostics.append(diagnose(n, following, delta=delta, weighted_delta=weighted,
                                    ratio=ratio, plain_ratio=plain_ratio))
        current = following
        ratio_text = f"{ratio:.4f}" if ratio is not None else "-"
        logger.info(f"Picard iteration {n}: delta={delta:.4e} weighted={weighted:.4e} ratio={ratio_text}")
        if delta < tol:
            logger.info(f"Picard solve converged after {n} iterations")
            return current, diagnostics

    last = diagnostics[-1]
    if last.ratio is not None and last.ratio >= 1.0:
        raise NoConvergence(f"Picard iteration did not converge in {max_iter} iterations "
                            f"(last delta {last.delta:.4e}, weighted ratio {last.ratio:.4f})")
    logger.warning(f"Picard iteration stopped at max_iter={max_iter} with delta {last.delta:.4e} >= tol {tol:.1e}")
    return current, diagnostics


def random_field_value(iterate: VorticityIterate, batch: BrownianBatch, nu: float, t: float,
                       path: int) -> SpectralField:
    """
    Y~(t, .) = theta(T - t, . + sqrt(2 nu) B_t) on one Brownian path, by exact
    spectral translation of the skeleton slice.
    """
    step = int(round(t / batch.dt))
    shift = math.sqrt(2.0 * nu) * batch.positions(step)[path]
    return translate(iterate.theta.at(iterate.horizon - t), shift)


def velocity_of_iterate(iterate: VorticityIterate, index: int = -1
                        ) -> Tuple[SpectralField, SpectralField]:
    """Velocity u and vorticity omega = d1 u2 - d2 u1 = (I - a^2 Lap)^{-1} q at one time slice."""
    u = iterate.u[index]
    return u, vorticity(u)
