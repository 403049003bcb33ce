import logging
import math
from dataclasses import asdict, dataclass
from typing import List, Optional, Tuple

import numpy as np

from initial_data import shell_energy_fraction
from models import AlphaModelParams, HorizonUnderflow, MonteCarloConfig, NoConvergence, TruncationWarning
from oracle import advance_linear_transport, mild_residual
from spectral_core import (FieldTrajectory, SpectralField, assemble_J, check_divergence_free, check_mean_zero,
                           dealias, derivative, divergence, divergence_defect_spectral, heat_flow,
                           helmholtz_inverse, laplacian, leray_project, lp_norm, multiply, newtonian_potential,
                           pressure_source, sobolev_norm)
from stochastic_engine import BrownianBatch, estimate_trajectory, generate_batch

logger = logging.getLogger(__name__)

MIN_HORIZON_STEPS = 8
RATIO_TARGET = 0.5
RATIO_WINDOW = 3
NORM_CONTROL_FACTOR = 4.0
DIV_MONOTONE_RTOL = 1e-6
DIV_MONOTONE_FLOOR = 1e-10


@dataclass
class MomentumIterate:
    m: FieldTrajectory
    v: FieldTrajectory
    J: FieldTrajectory
    norms: np.ndarray
    phi_divergence: float = 0.0
    phi_h_norm: float = 0.0
    mc_max_stderr: Optional[float] = None

    @classmethod
    def build(cls, m: FieldTrajectory, alpha: float, k: int = 2, p: float = 4.0,
              leray_alpha: bool = False, **extra) -> "MomentumIterate":
        v = m.map(lambda s: helmholtz_inverse(dealias(s), alpha))
        J = m.map(lambda s: assemble_J(s, alpha, leray_alpha=leray_alpha))
        norms = np.array([sobolev_norm(s, k, p) for s in m.slices])
        return cls(m=m, v=v, J=J, norms=norms, **extra)

    @property
    def times(self) -> np.ndarray:
        return self.m.times

    @property
    def horizon(self) -> float:
        return self.m.horizon


@dataclass
class FixedPointDiagnostics:
    iteration: int
    sup_Wk_p: float
    delta: Optional[float]
    ratio: Optional[float]
    div_defect: float
    h_norm: float
    T0: float
    norm_bound: float = math.inf
    mild_residual: Optional[float] = None
    mc_max_stderr: Optional[float] = None
    div_monotone: bool = True

    @property
    def within_norm_bound(self) -> bool:
        return self.sup_Wk_p <= self.norm_bound

    def to_row(self) -> dict:
        row = asdict(self)
        row['within_norm_bound'] = self.within_norm_bound
        return row


def _times(T0: float, dt: float) -> np.ndarray:
    n = max(1, int(round(T0 / dt)))
    return np.arange(n + 1) * dt


def feynman_kac_phi(m_prev: MomentumIterate, m0: SpectralField, params: AlphaModelParams,
                    mc: Optional[MonteCarloConfig] = None, batch: Optional[BrownianBatch] = None
                    ) -> Tuple[FieldTrajectory, Optional[float]]:
    """
    Phi(t) = E m0(X_T) + int E J(T - s, X_s) ds along characteristics driven by
    v_prev, componentwise.

    Without `mc` the same linear problem d_t Phi + v . grad Phi = nu Lap Phi + J
    is solved by integrating-factor stepping.

    Returns:
        Phi trajectory on m_prev's time grid and the largest MC standard error
    """
    times = m_prev.times
    if mc is None:
        dt = float(times[1] - times[0]) if len(times) > 1 else 0.0
        return advance_linear_transport(m0, m_prev.v, params.nu, dt, len(times) - 1, source=m_prev.J), None
    if batch is None:
        batch = generate_batch(mc.seed, mc.n_paths, max(1, int(round(m_prev.horizon / mc.dt))), mc.dt, m0.dim)
    estimate = estimate_trajectory(batch, m0, times, params.nu, estimator="characteristics", drift=m_prev.v,
                                   source=m_prev.J, stride=mc.stencil_stride)
    phi = estimate.trajectory(m0.grid_shape, m0.box_length)
    phi.slices[0] = m0
    return phi, estimate.max_stderr


def divergence_defect(phi: FieldTrajectory, m_prev: MomentumIterate, p: float = 2.0) -> Tuple[float, float]:
    """
    sup_t ||div Phi(t)||_p and sup_t ||H(t)||_p with
    H = sum_ij d_i u^j d_j (Phi^i - m^i), u the filtered velocity of m_prev.
    """
    worst_div = 0.0
    worst_h = 0.0
    for i in range(len(phi)):
        f = phi[i]
        worst_div = max(worst_div, lp_norm(divergence(f), p))
        u = m_prev.v[i]
        gap = f - m_prev.m[i]
        H = None
        for a in range(f.dim):
            for b in range(f.dim):
                term = multiply(derivative(u.component(b), a), derivative(gap.component(a), b))
                H = term if H is None else H + term
        worst_h = max(worst_h, lp_norm(H, p))
    return worst_div, worst_h


def p_nu_map(m_prev: MomentumIterate, m0: SpectralField, params: AlphaModelParams,
             mc: Optional[MonteCarloConfig] = None, k: int = 2, p: float = 4.0, leray_alpha: bool = False,
             batch: Optional[BrownianBatch] = None) -> MomentumIterate:
    """Leray projection of every Feynman-Kac slice; the divergence of Phi is recorded first."""
    phi, stderr = feynman_kac_phi(m_prev, m0, params, mc=mc, batch=batch)
    div_norm, h_norm = divergence_defect(phi, m_prev, p)
    projected = phi.map(lambda f: leray_project(f).remove_mean())
    projected.slices[0] = m0
    return MomentumIterate.build(projected, params.alpha, k, p, leray_alpha,
                                 phi_divergence=div_norm, phi_h_norm=h_norm, mc_max_stderr=stderr)


def initial_iterate(m0: SpectralField, params: AlphaModelParams, times: np.ndarray, kind: str = "constant",
                    k: int = 2, p: float = 4.0, leray_alpha: bool = False) -> MomentumIterate:
    if kind == "constant":
        slices = [m0] * len(times)
    elif kind == "heat":
        slices = [m0] + [heat_flow(m0, params.nu, float(t)) for t in times[1:]]
    else:
        raise ValueError(f"Unknown initial iterate '{kind}'")
    return MomentumIterate.build(FieldTrajectory(times=times, slices=slices), params.alpha, k, p, leray_alpha)


def _div_grew(previous: Optional[float], current: float) -> bool:
    return previous is not None and current > previous * (1.0 + DIV_MONOTONE_RTOL) + DIV_MONOTONE_FLOOR


def _sup_distance(a: FieldTrajectory, b: FieldTrajectory, k: int, p: float) -> float:
    return max(sobolev_norm(x - y, k, p) for x, y in zip(a.slices, b.slices))


def fixed_point_solve(m0: SpectralField, params: AlphaModelParams, k: int = 2, p: float = 4.0,
                      tol: float = 1e-8, max_iter: int = 20, dt: float = 1e-2,
                      mc: Optional[MonteCarloConfig] = None, initial: str = "constant",
                      leray_alpha: bool = False, shell_tolerance: Optional[float] = None
                      ) -> Tuple[MomentumIterate, List[FixedPointDiagnostics]]:
    """
    Iterate m_{n+1} = P_nu(m_n) on [0, T0], starting from T0 = params.T.

    When the contraction ratio is still >= 1/2 after three iterations the
    horizon is halved (dt fixed) and the iteration restarts.

    Args:
        m0: Divergence-free initial momentum
        k, p: Sobolev pair for norms; deltas are measured in W^{k-1,p}
        initial: First iterate, "constant" (m1 = m0) or "heat"
        shell_tolerance: Abort when iterates put more energy in the boundary shell

    Raises:
        NotDivergenceFree: If m0 is not divergence-free
        HorizonUnderflow: If T0 drops below 8 dt
        NoConvergence: If max_iter is reached while deltas are not contracting
        TruncationWarning: If the boundary shell picks up energy
    """
    if k <= 1 or p <= m0.dim:
        logger.warning(f"(k, p) = ({k}, {p}) is outside k > 1, p > d = {m0.dim}")
    check_divergence_free(m0)
    m0 = m0.with_flags(mean_zero=True, divergence_free=True)
    T0 = params.T
    diagnostics: List[FixedPointDiagnostics] = []

    while True:
        if T0 < MIN_HORIZON_STEPS * dt * (1.0 - 1e-9):
            raise HorizonUnderflow(f"Horizon T0={T0:.4e} fell below {MIN_HORIZON_STEPS} steps of dt={dt}")
        times = _times(T0, dt)
        batch = None
        if mc is not None:
            batch = generate_batch(mc.seed, mc.n_paths, max(1, int(round(float(times[-1]) / mc.dt))), mc.dt, m0.dim)
        current = initial_iterate(m0, params, times, initial, k, p, leray_alpha)
        norm_bound = NORM_CONTROL_FACTOR * max(float(np.max(current.norms)), sobolev_norm(m0, k, p))
        previous_delta = None
        previous_div = None
        restart = False
        logger.info(f"Fixed-point solve on T0={T0:.4e} ({len(times) - 1} steps, first iterate '{initial}', "
                    f"leray_alpha={leray_alpha})")

        for n in range(1, max_iter + 1):
            following = p_nu_map(current, m0, params, mc=mc, k=k, p=p, leray_alpha=leray_alpha, batch=batch)
            if shell_tolerance is not None:
                fraction = max(shell_energy_fraction(s) for s in following.m.slices)
                if fraction > shell_tolerance:
                    raise TruncationWarning(f"Boundary-shell energy fraction {fraction:.3e} exceeds "
                                            f"{shell_tolerance:.1e} at iteration {n}")
            delta = _sup_distance(following.m, current.m, k - 1, p)
            ratio = delta / previous_delta if previous_delta else None
            row = FixedPointDiagnostics(iteration=n, sup_Wk_p=float(np.max(following.norms)), delta=delta,
                                        ratio=ratio, div_defect=following.phi_divergence,
                                        h_norm=following.phi_h_norm, T0=T0, norm_bound=norm_bound,
                                        mc_max_stderr=following.mc_max_stderr)
            if _div_grew(previous_div, row.div_defect):
                row.div_monotone = False
                logger.warning(f"Iteration {n}: div Phi grew from {previous_div:.4e} to {row.div_defect:.4e} "
                               f"on T0={T0:.4e}")
            previous_div = row.div_defect
            diagnostics.append(row)
            if not row.within_norm_bound:
                logger.warning(f"Iteration {n}: sup W^(k,p) norm {row.sup_Wk_p:.4e} above {norm_bound:.4e}")
            ratio_text = f"{ratio:.4f}" if ratio is not None else "-"
            logger.info(f"Fixed-point iteration {n}: delta={delta:.4e} ratio={ratio_text} "
                        f"div Phi={row.div_defect:.3e}")
            current = following
            previous_delta = delta

            if delta < tol:
                row.mild_residual = mild_residual(current.m, params, leray_alpha)
                logger.info(f"Fixed point reached on T0={T0:.4e} after {n} iterations "
                            f"(mild residual {row.mild_residual:.3e})")
                return current, diagnostics
            if n >= RATIO_WINDOW and ratio is not None and ratio >= RATIO_TARGET:
                logger.info(f"Contraction ratio {ratio:.3f} >= {RATIO_TARGET} after {n} iterations; "
                            f"halving T0 to {T0 / 2.0:.4e}")
                T0 = T0 / 2.0
                restart = True
                break

        if restart:
            continue
        last = diagnostics[-1]
        if last.ratio is None or last.ratio >= 1.0:
            raise NoConvergence(f"Fixed-point iteration did not converge in {max_iter} iterations "
                                f"(last delta {last.delta:.4e})")
        last.mild_residual = mild_residual(current.m, params, leray_alpha)
        logger.warning(f"Fixed-point iteration stopped at max_iter={max_iter} with delta {last.delta:.4e}")
        return current, diagnostics


def divergence_sup(iterate: MomentumIterate) -> float:
    """Largest relative spectral divergence over the slices of an accepted iterate."""
    return max(divergence_defect_spectral(s) for s in iterate.m.slices)


def recover_pressure(m: SpectralField, params: AlphaModelParams, leray_alpha: bool = False) -> SpectralField:
    """
    p with Lap p = -G_u, u = (I - a^2 Lap)^{-1} m, mean zero.

    Raises:
        NonZeroMean: If G_u has a mean, i.e. m was not divergence-free
    """
    u = helmholtz_inverse(dealias(m), params.alpha)
    G = pressure_source(u, params.alpha, leray_alpha=leray_alpha)
    check_mean_zero(G, rtol=1e-6)
    return newtonian_potential(-G.remove_mean())


def pressure_residual(p: SpectralField, m: SpectralField, params: AlphaModelParams,
                      leray_alpha: bool = False) -> float:
    """||Lap p + G_u||_2 / ||G_u||_2."""
    u = helmholtz_inverse(dealias(m), params.alpha)
    G = pressure_source(u, params.alpha, leray_alpha=leray_alpha)
    scale = lp_norm(G)
    if scale == 0.0:
        return lp_norm(laplacian(p))
    return lp_norm(laplacian(p) + G.remove_mean()) / scale
