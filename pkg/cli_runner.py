"""
Batch experiment front end.

`run` validates nothing itself: it receives an ExperimentConfig, dispatches to
the mode handler, records acceptance verdicts and writes the run directory:
manifest.json, one CSV per table, AFLD/CSV field dumps and a timing.json
sidecar that holds everything non-reproducible.
"""

import json
import logging
import math
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import typer
from rich.console import Console
from rich.table import Table

from bsde2d import heat_iterate, picard_solve_2d, picard_step_2d, velocity_of_iterate
from config import CODE_VERSION, Config, ExperimentConfig, load_experiment_config
from field_io import read_field, write_field, write_field_csv, write_table, write_trajectory
from fixedpoint_nd import divergence_sup, fixed_point_solve, pressure_residual, recover_pressure
from initial_data import (centered_bump, divergence_free_single_mode, random_band_field,
                          random_divergence_free_field, single_mode, two_mode)
from models import ConfigError, NonZeroMean, NotDivergenceFree, RunReport, SolverError
from oracle import mild_residual, oracle_mild_nd, oracle_vorticity_2d
from spectral_core import (FieldTrajectory, SpectralField, check_mean_zero, divergence_defect_spectral,
                           heat_flow, helmholtz_forward, lp_norm)
from stochastic_engine import (estimate_trajectory, generate_batch, girsanov_paths, interpolation_error,
                               stencil_points, weight_mean)

logger = logging.getLogger(__name__)

DECAY_TOL_ORACLE = 1e-8
DECAY_TOL_PICARD = 1e-6
MEAN_TOL = 1e-10
DIVERGENCE_TOL = 1e-8
PRESSURE_TOL = 1e-8
UNIQUENESS_TOL = 1e-5
ORDER_TARGET = 2.0
ORDER_SLACK = 0.3
CONTRACTION_SLACK = 0.05
WEIGHT_SAMPLE_POINTS = 8


# Initial data

def build_initial_field(config: ExperimentConfig) -> SpectralField:
    """
    Initial field named by the [initial] section.

    2D modes get a mean-zero scalar (q or omega); 3D modes get a
    divergence-free momentum.

    Raises:
        ConfigError: If the family does not exist in the run's dimension or a file does not match the grid
    """
    initial = config.initial
    dim = config.dim
    L = config.model.L
    grid = (config.grid.n,) * dim
    family = initial.family

    if family == "file":
        field = read_field(initial.path)
        if field.dim != dim or field.grid_shape != grid:
            raise ConfigError(f"Initial field {initial.path} has grid {field.grid_shape}, expected {grid}",
                              {'initial.path': f"grid {field.grid_shape} does not match {grid}"})
        return field
    if dim == 2:
        if family == "single-mode":
            return single_mode(grid, L, (initial.kx, initial.ky), initial.amplitude)
        if family == "two-mode":
            return two_mode(grid, L, initial.amplitude)
        if family == "random-band":
            return random_band_field(grid, L, initial.band, seed=initial.seed, amplitude=initial.amplitude)
    else:
        if family == "single-mode":
            return divergence_free_single_mode(grid, L, initial.amplitude, k=initial.kx)
        if family == "random-band":
            return random_divergence_free_field(grid, L, initial.band, seed=initial.seed, amplitude=initial.amplitude)
        if family == "centered-bump":
            return centered_bump(grid, L, initial.radius, initial.amplitude, config.solver.k, config.solver.p)
    raise ConfigError(f"Initial family '{family}' is not available for {dim}D mode '{config.run.mode}'",
                      {'initial.family': f"not available in {dim}D"})


# Helpers shared by the handlers

def _relative_l2(a: SpectralField, b: SpectralField) -> float:
    scale = lp_norm(b)
    return lp_norm(a - b) / scale if scale > 0 else lp_norm(a - b)


def _mean_conserved(trajectory: FieldTrajectory) -> bool:
    for f in trajectory.slices:
        if float(np.max(np.abs(f.mean()))) * f.box_length ** f.dim > MEAN_TOL * max(lp_norm(f), 1e-300):
            return False
    return True


def _dump(report: RunReport, out: Path, config: ExperimentConfig, name: str, trajectory: FieldTrajectory) -> None:
    if config.output.dump_stride > 0:
        report.artifacts.extend(write_trajectory(out / "fields", name, trajectory, config.output.dump_stride))
    report.artifacts.append(write_field(out / f"{name}_final.afld", trajectory[-1]))
    report.artifacts.append(write_field_csv(out / f"{name}_final.csv", trajectory[-1]))


def _verdict(report: RunReport, name: str, passed: bool, value: Optional[float] = None,
             threshold: Optional[float] = None) -> None:
    report.verdicts[name] = bool(passed)
    report.add_row("acceptance", {'suite': name, 'passed': bool(passed), 'value': value, 'threshold': threshold})
    if not passed:
        logger.warning(f"Acceptance suite '{name}' failed (value={value}, threshold={threshold})")


def _stencil_values(f: SpectralField, stride: int) -> np.ndarray:
    return f.values[(slice(None),) + tuple(slice(None, None, stride) for _ in range(f.dim))]


# Mode handlers

def run_oracle2d(config: ExperimentConfig, report: RunReport, out: Path) -> None:
    params = config.params()
    psi = build_initial_field(config)
    oracle = oracle_vorticity_2d(psi, params, config.grid.dt, config.n_steps)
    for row in oracle.norms_table():
        report.add_row("oracle_norms", row)
    _verdict(report, "mean_conserved", _mean_conserved(oracle.trajectory))
    _verdict(report, "cfl", oracle.max_cfl <= 0.5 + 1e-12, oracle.max_cfl, 0.5)
    if config.initial.family == "single-mode":
        expected = heat_flow(psi, params.nu, oracle.trajectory.horizon)
        error = _relative_l2(oracle.final, expected)
        _verdict(report, "single_mode_decay", error <= DECAY_TOL_ORACLE, error, DECAY_TOL_ORACLE)
    _dump(report, out, config, "q", oracle.trajectory)


def run_bsde2d(config: ExperimentConfig, report: RunReport, out: Path) -> None:
    params = config.params()
    psi = build_initial_field(config)
    mc = config.mc_config() if config.monte_carlo.enabled else None
    iterate, diagnostics = picard_solve_2d(psi, params, config.solver.tol, config.solver.max_iter, mc=mc,
                                           dt=config.grid.dt)
    for row in diagnostics:
        report.add_row("picard", row.to_row())
    if mc is not None:
        report.n_paths_used = mc.n_paths * (len(diagnostics) - 1)
    if any(row.nu_outside_regime for row in diagnostics):
        report.add_row("notes", {'note': f"nu={params.nu} > 2 is outside the contraction certificate's regime"})

    _verdict(report, "terminal_consistency", bool(np.array_equal(iterate.theta[0].values, psi.values)))
    _verdict(report, "maximum_principle", all(row.max_principle_ok for row in diagnostics))
    _verdict(report, "mean_zero", _mean_conserved(iterate.theta))
    ratios = [row.ratio for row in diagnostics if row.ratio is not None]
    _verdict(report, "contraction", all(r < 1.0 for r in ratios), max(ratios) if ratios else None, 1.0)
    if ratios and params.nu <= 2.0:
        limit = 0.5 + CONTRACTION_SLACK
        _verdict(report, "weighted_contraction", max(ratios) <= limit, max(ratios), limit)
    last = diagnostics[-1]
    _verdict(report, "bmo_bound", last.bmo_ok, last.bmo, last.bmo_bound)

    oracle = oracle_vorticity_2d(psi, params, config.grid.dt, len(iterate.times) - 1)
    if mc is None:
        error = _relative_l2(iterate.theta[-1], oracle.final)
        _verdict(report, "oracle_agreement", error <= config.solver.oracle_tol, error, config.solver.oracle_tol)
        if config.initial.family == "single-mode":
            expected = heat_flow(psi, params.nu, iterate.horizon)
            decay = _relative_l2(iterate.theta[-1], expected)
            _verdict(report, "single_mode_decay", decay <= DECAY_TOL_PICARD, decay, DECAY_TOL_PICARD)
    else:
        stride = mc.stencil_stride
        gap = np.abs(iterate.mc.estimates[-1] - _stencil_values(oracle.final, stride))
        allowance = config.monte_carlo.sigmas * iterate.mc.stderr[-1] + interpolation_error(psi)
        worst = float(np.max(gap - allowance))
        _verdict(report, "mc_oracle_agreement", worst <= 0.0, worst, 0.0)

    _dump(report, out, config, "theta", iterate.theta)
    u, omega = velocity_of_iterate(iterate)
    report.artifacts.append(write_field_csv(out / "omega_final.csv", omega))
    report.artifacts.append(write_field(out / "u_final.afld", u))


def run_crosscheck(config: ExperimentConfig, report: RunReport, out: Path) -> None:
    """Linear test: deterministic Picard step vs both MC estimators at t = 0."""
    params = config.params()
    mc = config.mc_config()
    psi = build_initial_field(config)
    check_mean_zero(psi)
    n_steps = config.n_steps
    times = np.arange(n_steps + 1) * config.grid.dt
    prev = heat_iterate(psi, params, times)
    deterministic = picard_step_2d(prev, psi, params)
    horizon = float(times[-1])

    batch = generate_batch(mc.seed, mc.n_paths, max(1, int(round(horizon / mc.dt))), mc.dt, 2)
    ends = np.array([0.0, horizon])
    drift = prev.u
    stride = mc.stencil_stride
    girsanov = estimate_trajectory(batch, psi, ends, params.nu, "girsanov", drift=drift, stride=stride)
    characteristics = estimate_trajectory(batch, psi, ends, params.nu, "characteristics", drift=drift, stride=stride)
    quarter = estimate_trajectory(batch.subset(max(2, mc.n_paths // 4)), psi, ends, params.nu, "girsanov",
                                  drift=drift, stride=stride)
    report.n_paths_used = mc.n_paths * 2 + max(2, mc.n_paths // 4)

    reference = _stencil_values(deterministic.theta[-1], stride)
    bias = interpolation_error(psi)
    sigmas = config.monte_carlo.sigmas
    g, c = girsanov.estimates[-1], characteristics.estimates[-1]
    g_err, c_err = girsanov.stderr[-1], characteristics.stderr[-1]
    combined = np.sqrt(g_err ** 2 + c_err ** 2)
    for index in np.ndindex(*reference.shape):
        report.add_row("crosscheck", {
            'point': int(np.ravel_multi_index(index, reference.shape)), 'deterministic': float(reference[index]),
            'girsanov': float(g[index]), 'girsanov_stderr': float(g_err[index]),
            'characteristics': float(c[index]), 'characteristics_stderr': float(c_err[index]),
        })

    worst_g = float(np.max(np.abs(g - reference) - sigmas * g_err - bias))
    worst_c = float(np.max(np.abs(c - reference) - sigmas * c_err - bias))
    worst_gc = float(np.max(np.abs(g - c) - 3.0 * combined - bias))
    _verdict(report, "girsanov_vs_deterministic", worst_g <= 0.0, worst_g, 0.0)
    _verdict(report, "characteristics_vs_deterministic", worst_c <= 0.0, worst_c, 0.0)
    _verdict(report, "estimators_agree", worst_gc <= 0.0, worst_gc, 0.0)

    scaling = float(np.mean(quarter.stderr[-1]) / np.mean(g_err)) if np.mean(g_err) > 0 else math.nan
    _verdict(report, "stderr_scaling", abs(scaling / 2.0 - 1.0) <= 0.2, scaling, 2.0)

    points = stencil_points(psi.grid_shape, psi.box_length, stride)[:WEIGHT_SAMPLE_POINTS]
    h = drift.map(lambda u: u * (1.0 / math.sqrt(2.0 * params.nu)))
    state = girsanov_paths(batch, h, params.nu, points, 0.0, horizon=horizon, box_length=psi.box_length)
    means, errors = weight_mean(state)
    worst_w = float(np.max(np.abs(means - 1.0) - 4.0 * errors))
    for i, (m, e) in enumerate(zip(means, errors)):
        report.add_row("girsanov_weights", {'point': i, 'weight_mean': float(m), 'stderr': float(e)})
    _verdict(report, "weights_martingale", worst_w <= 0.0, worst_w, 0.0)

    report.artifacts.append(write_field(out / "theta_deterministic.afld", deterministic.theta[-1]))


def run_fixedpoint3d(config: ExperimentConfig, report: RunReport, out: Path) -> None:
    params = config.params()
    m0 = build_initial_field(config)
    solver = config.solver
    mc = config.mc_config() if config.monte_carlo.enabled else None
    leray_alpha = config.run.leray_alpha
    common = dict(k=solver.k, p=solver.p, tol=solver.tol, max_iter=solver.max_iter, dt=config.grid.dt, mc=mc,
                  leray_alpha=leray_alpha, shell_tolerance=solver.shell_tolerance)

    iterate, diagnostics = fixed_point_solve(m0, params, initial=solver.initial_iterate, **common)
    other = "heat" if solver.initial_iterate == "constant" else "constant"
    alternate, alt_diagnostics = fixed_point_solve(m0, params, initial=other, **common)
    for row in diagnostics:
        report.add_row("fixed_point", row.to_row())
    for row in alt_diagnostics:
        report.add_row("fixed_point_alternate", row.to_row())
    if mc is not None:
        report.n_paths_used = mc.n_paths * (len(diagnostics) + len(alt_diagnostics))

    last = diagnostics[-1]
    _verdict(report, "contraction", last.ratio is None or last.ratio <= 0.5, last.ratio, 0.5)
    defect = divergence_sup(iterate)
    _verdict(report, "divergence_free", defect <= DIVERGENCE_TOL, defect, DIVERGENCE_TOL)
    residual = last.mild_residual if last.mild_residual is not None else mild_residual(iterate.m, params, leray_alpha)
    _verdict(report, "mild_residual", residual <= solver.residual_tol, residual, solver.residual_tol)
    _verdict(report, "norm_control", all(row.within_norm_bound for row in diagnostics))
    if mc is None:
        # MC estimates of div Phi stall at the noise level
        _verdict(report, "divergence_monotone", all(row.div_monotone for row in diagnostics))
    _verdict(report, "starts_at_m0", bool(np.array_equal(iterate.m[0].values, m0.values)))

    horizon = min(iterate.horizon, alternate.horizon)
    times = [t for t in iterate.times if t <= horizon + 1e-12]
    gap = max(lp_norm(iterate.m.at(t) - alternate.m.at(t)) for t in times)
    scale = max(iterate.m.sup(lp_norm), 1e-300)
    _verdict(report, "uniqueness", gap / scale <= UNIQUENESS_TOL, gap / scale, UNIQUENESS_TOL)

    pressure = recover_pressure(iterate.m[-1], params, leray_alpha)
    p_residual = pressure_residual(pressure, iterate.m[-1], params, leray_alpha)
    _verdict(report, "pressure_residual", p_residual <= PRESSURE_TOL, p_residual, PRESSURE_TOL)

    _dump(report, out, config, "m", iterate.m)
    report.artifacts.append(write_field(out / "pressure_final.afld", pressure))


def run_oracle3d(config: ExperimentConfig, report: RunReport, out: Path) -> None:
    params = config.params()
    m0 = build_initial_field(config)
    leray_alpha = config.run.leray_alpha
    oracle = oracle_mild_nd(m0, params, config.grid.dt, config.n_steps, leray_alpha=leray_alpha,
                            shell_tolerance=config.solver.shell_tolerance)
    for row in oracle.norms_table():
        report.add_row("oracle_norms", row)
    residual = mild_residual(oracle.trajectory, params, leray_alpha)
    _verdict(report, "mild_residual", residual <= config.solver.residual_tol, residual, config.solver.residual_tol)
    defect = max(divergence_defect_spectral(s) for s in oracle.trajectory.slices)
    _verdict(report, "divergence_free", defect <= DIVERGENCE_TOL, defect, DIVERGENCE_TOL)
    _verdict(report, "mean_conserved", _mean_conserved(oracle.trajectory))
    _verdict(report, "cfl", oracle.max_cfl <= 0.5 + 1e-12, oracle.max_cfl, 0.5)
    _dump(report, out, config, "m", oracle.trajectory)


def fit_order(alphas: Sequence[float], differences: Sequence[float]) -> Optional[float]:
    """Slope of log(difference) against log(alpha) over rows with both positive."""
    pairs = [(a, d) for a, d in zip(alphas, differences) if a > 0 and d > 0]
    if len(pairs) < 2:
        return None
    x = np.log([a for a, _ in pairs])
    y = np.log([d for _, d in pairs])
    return float(np.polyfit(x, y, 1)[0])


def _sweep(config: ExperimentConfig, report: RunReport, out: Path, alphas: Sequence[float]) -> None:
    """
    The initial field is the vorticity omega0 shared by every alpha, so each
    run starts from q0 = (I - a^2 Lap) omega0 and is compared with alpha = 0.
    """
    params = config.params()
    omega0 = build_initial_field(config)
    check_mean_zero(omega0)
    dt, n_steps = config.grid.dt, config.n_steps
    baseline = oracle_vorticity_2d(omega0, params.with_alpha(0.0), dt, n_steps).final
    differences = []
    for alpha in alphas:
        final = oracle_vorticity_2d(helmholtz_forward(omega0, alpha), params.with_alpha(alpha), dt, n_steps).final
        difference = lp_norm(final - baseline)
        differences.append(difference)
        report.add_row("alpha_sweep", {'alpha': alpha, 'l2_difference': difference,
                                       'relative_difference': difference / max(lp_norm(baseline), 1e-300)})
        logger.info(f"alpha={alpha}: ||q_alpha(T) - q_0(T)||_2 = {difference:.6e}")
    order = fit_order(alphas, differences)
    report.add_row("alpha_order", {'fitted_order': order, 'n_points': sum(1 for a in alphas if a > 0)})
    if order is not None:
        _verdict(report, "alpha_order", abs(order - ORDER_TARGET) <= ORDER_SLACK, order, ORDER_TARGET)
    zero_rows = [d for a, d in zip(alphas, differences) if a == 0]
    if zero_rows:
        _verdict(report, "alpha_zero_baseline", all(d == 0.0 for d in zero_rows), max(zero_rows), 0.0)
    report.artifacts.append(write_field(out / "q_alpha0_final.afld", baseline))


MODE_HANDLERS: Dict[str, Callable[[ExperimentConfig, RunReport, Path], None]] = {
    "bsde2d": run_bsde2d,
    "fixedpoint3d": run_fixedpoint3d,
    "oracle2d": run_oracle2d,
    "oracle3d": run_oracle3d,
    "crosscheck": run_crosscheck,
}


# Reports

def run_directory(config: ExperimentConfig, output_dir: Optional[str] = None) -> Path:
    base = Path(output_dir or config.output.directory or Config.OUTPUT_DIR)
    return base / f"{config.run.mode}-{config.content_hash()[:12]}"


def write_report(report: RunReport, out: Path, config: ExperimentConfig, started: datetime) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name, rows in sorted(report.tables.items()):
        report.artifacts.append(write_table(out / f"{name}.csv", rows))
    artifacts = sorted({str(Path(p).relative_to(out)) if Path(p).is_relative_to(out) else str(p)
                        for p in report.artifacts})
    report.artifacts = artifacts
    manifest = report.to_dict()
    manifest.update({'code_version': CODE_VERSION, 'seed': config.run.seed})
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding='utf-8')
    timing = {'started_at': started.isoformat(), 'wall_clock_seconds': report.wall_clock_seconds,
              'runtime': Config.get_runtime_config()}
    (out / "timing.json").write_text(json.dumps(timing, sort_keys=True, indent=2) + "\n", encoding='utf-8')


def _execute(config: ExperimentConfig, output_dir: Optional[str],
             body: Callable[[RunReport, Path], None]) -> RunReport:
    started = datetime.now(timezone.utc)
    clock = time.perf_counter()
    out = run_directory(config, output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = RunReport(mode=config.run.mode, config=config.model_dump(mode='json'),
                       config_hash=config.content_hash())
    logger.info(f"Starting {config.run.mode} run {report.config_hash[:12]} -> {out}")
    try:
        body(report, out)
    except (NonZeroMean, NotDivergenceFree) as e:
        raise type(e)(f"{config.run.mode} run rejected its input: {e}") from e
    except SolverError as e:
        logger.error(f"{config.run.mode} run failed: {e}")
        raise
    report.wall_clock_seconds = time.perf_counter() - clock
    write_report(report, out, config, started)
    status = "passed" if report.passed else "FAILED"
    logger.info(f"Run {report.config_hash[:12]} {status} in {report.wall_clock_seconds:.1f}s")
    return report


def run(config: ExperimentConfig, output_dir: Optional[str] = None) -> RunReport:
    """
    Execute one experiment and write its run directory.

    Raises:
        ConfigError: If the configured initial data cannot be built
        SolverError: Solver failures, with the mode in the message
    """
    if config.run.mode == "alpha-sweep":
        return alpha_sweep(config, output_dir=output_dir)
    handler = MODE_HANDLERS[config.run.mode]
    return _execute(config, output_dir, lambda report, out: handler(config, report, out))


def alpha_sweep(config: ExperimentConfig, alphas: Optional[Sequence[float]] = None,
                output_dir: Optional[str] = None) -> RunReport:
    """
    2D oracle runs per alpha against the alpha = 0 baseline with a fitted
    convergence order of the terminal L2 differences.

    Raises:
        ConfigError: If no alphas are given or one is negative
    """
    values = list(config.sweep.alphas if alphas is None else alphas)
    if not values:
        raise ConfigError("alpha sweep needs at least one alpha", {'sweep.alphas': "empty list"})
    if any(a < 0 for a in values):
        raise ConfigError("alpha sweep values must be non-negative", {'sweep.alphas': "negative value"})
    values = sorted(values, reverse=True)
    return _execute(config, output_dir, lambda report, out: _sweep(config, report, out, values))


# Command line

app = typer.Typer(help="Navier-Stokes-alpha solver suite: batch experiment runner.", add_completion=False)
console = Console()


@app.callback()
def cli() -> None:
    """Run solver experiments from key=value config files."""


def _summary_table(report: RunReport) -> Table:
    table = Table(title=f"{report.mode} {report.config_hash[:12]}")
    table.add_column("suite")
    table.add_column("result")
    for name, passed in sorted(report.verdicts.items()):
        table.add_row(name, "pass" if passed else "FAIL")
    return table


@app.command("run")
def run_command(
        config_path: Path = typer.Argument(..., help="Experiment config file"),
        overrides: List[str] = typer.Option([], "--set", help="section.key=value override (repeatable)"),
        out: Optional[Path] = typer.Option(None, "--out", help="Output base directory"),
        seed: Optional[int] = typer.Option(None, "--seed", help="Master seed for Monte-Carlo modes"),
        leray_alpha: bool = typer.Option(False, "--leray-alpha", help="Use the Leray-alpha J assembly"),
) -> None:
    """Run one experiment; exit code 0 only if every acceptance suite passes."""
    settings = list(overrides)
    if seed is not None:
        settings.append(f"run.seed={seed}")
    if leray_alpha:
        settings.append("run.leray_alpha=true")
    try:
        config = load_experiment_config(str(config_path), settings)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        for name, message in sorted(e.field_errors.items()):
            console.print(f"[red]{name}[/red]: {message}")
        raise typer.Exit(code=2)
    try:
        report = run(config, output_dir=str(out) if out else None)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        raise typer.Exit(code=2)
    except SolverError as e:
        logger.error(f"Run failed: {e}")
        raise typer.Exit(code=1)
    console.print(_summary_table(report))
    raise typer.Exit(code=0 if report.passed else 1)
