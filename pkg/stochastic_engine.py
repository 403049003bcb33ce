import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from config import Config
from models import TimeGridMismatch, WeightOverflow, ZeroSteps
from spectral_core import FieldTrajectory, SpectralField, fourier_resample, grid_points, translate

logger = logging.getLogger(__name__)

LOG_WEIGHT_LIMIT = 50.0
_SEED_MASK = (1 << 64) - 1

Estimate = Tuple[Union[float, np.ndarray], Union[float, np.ndarray]]


@dataclass(frozen=True)
class BrownianBatch:
    """Brownian increments addressable by (path index, step); variance dt per component."""
    seed: int
    n_paths: int
    n_steps: int
    dt: float
    dim: int
    increments: np.ndarray

    def increment(self, path: int, step: int) -> np.ndarray:
        return self.increments[path, step]

    def positions(self, step: int) -> np.ndarray:
        """B at time step*dt for every path, shape (n_paths, dim)."""
        if step == 0:
            return np.zeros((self.n_paths, self.dim))
        return self.increments[:, :step].sum(axis=1)

    def subset(self, n_paths: int) -> "BrownianBatch":
        return BrownianBatch(seed=self.seed, n_paths=n_paths, n_steps=self.n_steps, dt=self.dt,
                             dim=self.dim, increments=self.increments[:n_paths])


@dataclass
class PathState:
    positions: np.ndarray
    displacement: np.ndarray
    log_weight: np.ndarray
    time_index: int


def _path_generator(seed: int, path: int) -> np.random.Generator:
    key = np.array([seed & _SEED_MASK, path], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _chunks(n: int, size: int) -> List[Tuple[int, int]]:
    return [(start, min(start + size, n)) for start in range(0, n, size)]


def _run_chunks(n: int, size: int, work: Callable[[int, int], None], workers: Optional[int] = None) -> None:
    spans = _chunks(n, size)
    workers = workers or Config.WORKERS
    if workers <= 1 or len(spans) == 1:
        for start, stop in spans:
            work(start, stop)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for future in [pool.submit(work, start, stop) for start, stop in spans]:
            future.result()


def generate_batch(seed: int, n_paths: int, n_steps: int, dt: float, dim: int,
                   workers: Optional[int] = None) -> BrownianBatch:
    """
    Counter-based batch: path i draws from Philox keyed by (seed, i), so every
    path is the same under any scheduling or worker count.
    """
    if n_steps <= 0:
        raise ZeroSteps(f"A Brownian batch needs at least one step, got {n_steps}")
    if n_paths <= 0:
        raise ValueError(f"n_paths must be positive, got {n_paths}")
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    increments = np.empty((n_paths, n_steps, dim))
    scale = math.sqrt(dt)

    def work(start: int, stop: int) -> None:
        for path in range(start, stop):
            increments[path] = _path_generator(seed, path).standard_normal((n_steps, dim)) * scale

    _run_chunks(n_paths, 1024, work, workers)
    logger.debug(f"Generated Brownian batch seed={seed} paths={n_paths} steps={n_steps} dt={dt}")
    return BrownianBatch(seed=seed, n_paths=n_paths, n_steps=n_steps, dt=dt, dim=dim,
                         increments=increments)


def interpolate_periodic(values: np.ndarray, points: np.ndarray, box_length: float) -> np.ndarray:
    """
    Multilinear interpolation of grid samples at arbitrary points.

    Args:
        values: (n_components, *grid_shape) samples
        points: (n, dim) coordinates, any real values (wrapped periodically)
        box_length: Box side L

    Returns:
        (n, n_components) interpolated values
    """
    grid_shape = values.shape[1:]
    dim = len(grid_shape)
    scaled = points / (box_length / np.asarray(grid_shape, dtype=np.float64))
    base = np.floor(scaled)
    frac = scaled - base
    base = base.astype(np.int64)
    result = np.zeros((points.shape[0], values.shape[0]))
    for corner in np.ndindex(*(2,) * dim):
        index = tuple((base[:, j] + corner[j]) % grid_shape[j] for j in range(dim))
        weight = np.ones(points.shape[0])
        for j in range(dim):
            weight = weight * (frac[:, j] if corner[j] else 1.0 - frac[:, j])
        result += weight[:, np.newaxis] * values[(slice(None),) + index].T
    return result


def _as_points(x: np.ndarray, dim: int) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    points = x.reshape(1, dim) if single else x
    if points.shape[1] != dim:
        raise ValueError(f"Points of dimension {points.shape[1]} for a {dim}D batch")
    return points, single


def _step_count(batch: BrownianBatch, t0: float, t1: float) -> int:
    if t1 < t0:
        raise TimeGridMismatch(f"Interval [{t0}, {t1}] is reversed")
    n = int(round((t1 - t0) / batch.dt))
    if abs(n * batch.dt - (t1 - t0)) > 1e-9 * max(1.0, t1):
        raise TimeGridMismatch(f"Interval [{t0}, {t1}] is not a multiple of dt={batch.dt}")
    if n > batch.n_steps:
        raise TimeGridMismatch(f"Interval needs {n} steps but the batch has {batch.n_steps}")
    return n


def _check_covers(trajectory: Optional[FieldTrajectory], horizon: float, t0: float, t1: float,
                  name: str) -> None:
    if trajectory is not None and not trajectory.covers(horizon - t1, horizon - t0):
        raise TimeGridMismatch(f"{name} field grid [0, {trajectory.horizon}] does not contain "
                               f"[{horizon - t1}, {horizon - t0}]")


def _resolve_horizon(horizon: Optional[float], *trajectories: Optional[FieldTrajectory],
                     default: float) -> float:
    if horizon is not None:
        return horizon
    for trajectory in trajectories:
        if trajectory is not None:
            return trajectory.horizon
    return default


def _march(batch: BrownianBatch, drift: Optional[FieldTrajectory], nu: float, points: np.ndarray,
           t0: float, n: int, horizon: float, box_length: float,
           visit: Optional[Callable[[float, np.ndarray], None]] = None) -> np.ndarray:
    """Euler-Maruyama X <- X + sqrt(2 nu) dW - v(T - s, X) ds; returns unwrapped (P, n_paths, dim)."""
    X = np.repeat(points[:, np.newaxis, :], batch.n_paths, axis=1)
    sigma = math.sqrt(2.0 * nu)
    for k in range(n):
        s = t0 + k * batch.dt
        if visit is not None:
            visit(s, X)
        step = sigma * batch.increments[:, k, :]
        if drift is not None:
            v = interpolate_periodic(drift.at(horizon - s).values, X.reshape(-1, batch.dim), box_length)
            step = step - v.reshape(X.shape) * batch.dt
        X = X + step
    return X


def integrate_sde(batch: BrownianBatch, drift: Optional[FieldTrajectory], nu: float, start: np.ndarray,
                  t0: float, t1: float, horizon: Optional[float] = None,
                  box_length: Optional[float] = None) -> PathState:
    """
    Drifted characteristics dX = sqrt(2 nu) dW - v(T - s, X) ds on [t0, t1].

    The drift is multilinear in space and piecewise constant (left endpoint) in
    time. Every start point is driven by the same batch of paths.

    Raises:
        TimeGridMismatch: If the drift grid does not contain [T - t1, T - t0]
    """
    points, _ = _as_points(start, batch.dim)
    horizon = _resolve_horizon(horizon, drift, default=t1)
    n = _step_count(batch, t0, t1)
    _check_covers(drift, horizon, t0, t1, "Drift")
    L = box_length if box_length is not None else (drift[0].box_length if drift is not None else 1.0)
    X = _march(batch, drift, nu, points, t0, n, horizon, L)
    displacement = X - points[:, np.newaxis, :]
    return PathState(positions=np.mod(X, L), displacement=displacement,
                     log_weight=np.zeros(X.shape[:2]), time_index=n)


def girsanov_paths(batch: BrownianBatch, h: Optional[FieldTrajectory], nu: float, x: np.ndarray, t: float,
                   horizon: Optional[float] = None, box_length: Optional[float] = None) -> PathState:
    """
    Driftless paths x + sqrt(2 nu) B on [t, T] with the log-density
    -sum <h(T - s, X_s), dB_s> - 1/2 sum |h|^2 ds accumulated per path.

    Raises:
        WeightOverflow: If any |log weight| exceeds LOG_WEIGHT_LIMIT
    """
    points, _ = _as_points(x, batch.dim)
    horizon = _resolve_horizon(horizon, h, default=t)
    n = _step_count(batch, t, horizon)
    _check_covers(h, horizon, t, horizon, "Girsanov drift")
    L = box_length if box_length is not None else (h[0].box_length if h is not None else 1.0)
    sigma = math.sqrt(2.0 * nu)
    X = np.repeat(points[:, np.newaxis, :], batch.n_paths, axis=1)
    log_weight = np.zeros(X.shape[:2])
    for k in range(n):
        s = t + k * batch.dt
        dB = batch.increments[:, k, :]
        if h is not None:
            hv = interpolate_periodic(h.at(horizon - s).values, X.reshape(-1, batch.dim), L).reshape(X.shape)
            log_weight -= np.einsum('pnd,nd->pn', hv, dB) + 0.5 * np.sum(hv ** 2, axis=2) * batch.dt
        X = X + sigma * dB
    worst = float(np.max(np.abs(log_weight))) if log_weight.size else 0.0
    if worst > LOG_WEIGHT_LIMIT:
        raise WeightOverflow(f"Girsanov log-weight reached {worst:.1f} (limit {LOG_WEIGHT_LIMIT}); "
                             f"reduce dt or the drift magnitude")
    return PathState(positions=np.mod(X, L), displacement=X - points[:, np.newaxis, :],
                     log_weight=log_weight, time_index=n)


def _summarize(samples: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """samples (P, n_paths, C) -> mean and standard error over paths, (P, C)."""
    samples = np.ascontiguousarray(np.moveaxis(samples, 1, 2))
    n = samples.shape[2]
    mean = samples.mean(axis=2)
    if n < 2:
        return mean, np.zeros_like(mean)
    stderr = samples.std(axis=2, ddof=1) / math.sqrt(n)
    return mean, stderr


def _shape(mean: np.ndarray, stderr: np.ndarray, single: bool) -> Estimate:
    if single:
        mean, stderr = mean[0], stderr[0]
        if mean.shape == (1,):
            return float(mean[0]), float(stderr[0])
    return mean, stderr


def _evaluate(terminal: SpectralField, positions: np.ndarray) -> np.ndarray:
    shape = positions.shape
    values = interpolate_periodic(terminal.values, positions.reshape(-1, shape[-1]), terminal.box_length)
    return values.reshape(shape[:-1] + (terminal.n_components,))


def _by_point_chunks(points: np.ndarray, work: Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]],
                     workers: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    spans = _chunks(points.shape[0], Config.MC_CHUNK)
    results: List[Optional[Tuple[np.ndarray, np.ndarray]]] = [None] * len(spans)

    def run(index: int, start: int, stop: int) -> None:
        results[index] = work(points[start:stop])

    workers = workers or Config.WORKERS
    if workers <= 1 or len(spans) == 1:
        for index, (start, stop) in enumerate(spans):
            run(index, start, stop)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for future in [pool.submit(run, i, a, b) for i, (a, b) in enumerate(spans)]:
                future.result()
    return (np.concatenate([r[0] for r in results]), np.concatenate([r[1] for r in results]))


def girsanov_value(batch: BrownianBatch, h: Optional[FieldTrajectory], terminal: SpectralField, x: np.ndarray,
                   t: float, nu: float, horizon: Optional[float] = None,
                   workers: Optional[int] = None) -> Estimate:
    """
    Weighted-driftless estimate E[xi(X_T) exp(-int <h, dB> - 1/2 int |h|^2 ds)].

    With h = u(T - s, .) / sqrt(2 nu) this is the value at time t of the linear
    BSDE whose driver is <Z, u>.

    Returns:
        (estimate, stderr); floats for a single point and scalar terminal,
        otherwise arrays of shape (n_points, n_components) or (n_components,)
    """
    points, single = _as_points(x, batch.dim)

    def work(chunk: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        state = girsanov_paths(batch, h, nu, chunk, t, horizon=horizon, box_length=terminal.box_length)
        samples = np.exp(state.log_weight)[..., np.newaxis] * _evaluate(terminal, state.positions)
        return _summarize(samples)

    mean, stderr = _by_point_chunks(points, work, workers)
    return _shape(mean, stderr, single)


def characteristics_value(batch: BrownianBatch, drift: Optional[FieldTrajectory], terminal: SpectralField,
                          source: Optional[FieldTrajectory], x: np.ndarray, t: float, nu: float,
                          horizon: Optional[float] = None, workers: Optional[int] = None) -> Estimate:
    """
    Feynman-Kac estimate E[terminal(X_T) + sum_s source(T - s, X_s) ds] along
    drifted characteristics started at x at time t (left-endpoint rule).

    Raises:
        TimeGridMismatch: If drift or source grids do not cover the interval
    """
    points, single = _as_points(x, batch.dim)
    horizon = _resolve_horizon(horizon, drift, source, default=t)
    n = _step_count(batch, t, horizon)
    _check_covers(drift, horizon, t, horizon, "Drift")
    _check_covers(source, horizon, t, horizon, "Source")
    L = terminal.box_length

    def work(chunk: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        accumulated = np.zeros((chunk.shape[0], batch.n_paths, terminal.n_components))

        def visit(s: float, X: np.ndarray) -> None:
            if source is not None:
                accumulated[...] += _evaluate(source.at(horizon - s), X) * batch.dt

        X = _march(batch, drift, nu, chunk, t, n, horizon, L, visit=visit)
        return _summarize(accumulated + _evaluate(terminal, X))

    mean, stderr = _by_point_chunks(points, work, workers)
    return _shape(mean, stderr, single)


def weight_mean(state: PathState) -> Tuple[np.ndarray, np.ndarray]:
    """Sample mean of exp(log weight) per point with its standard error."""
    weights = np.exp(state.log_weight)
    n = weights.shape[1]
    return weights.mean(axis=1), weights.std(axis=1, ddof=1) / math.sqrt(n)


@dataclass
class StencilEstimate:
    """MC estimates of a trajectory on every `stride`-th grid point per axis."""
    stride: int
    times: np.ndarray
    estimates: np.ndarray
    stderr: np.ndarray

    @property
    def max_stderr(self) -> float:
        return float(np.max(self.stderr)) if self.stderr.size else 0.0

    def trajectory(self, grid_shape: Sequence[int], box_length: float, **flags) -> FieldTrajectory:
        """Fourier-interpolate every slice from the stencil back to the full grid."""
        slices = [fourier_resample(SpectralField(values=values, box_length=box_length), grid_shape)
                  .with_flags(**flags) for values in self.estimates]
        return FieldTrajectory(times=self.times.copy(), slices=slices)


def stencil_points(grid_shape: Sequence[int], box_length: float, stride: int) -> np.ndarray:
    """Coordinates of the coarse stencil, shape (n_points, dim) in row-major order."""
    for n in grid_shape:
        if n % stride:
            raise ValueError(f"Stencil stride {stride} does not divide grid size {n}")
    coarse = tuple(n // stride for n in grid_shape)
    points = grid_points(coarse, box_length)
    return points.reshape(len(coarse), -1).T


def estimate_trajectory(batch: BrownianBatch, terminal: SpectralField, times: np.ndarray, nu: float,
                        estimator: str = "girsanov", drift: Optional[FieldTrajectory] = None,
                        source: Optional[FieldTrajectory] = None, stride: int = 1,
                        workers: Optional[int] = None) -> StencilEstimate:
    """
    Value of the linear transport-diffusion problem started from `terminal` at
    every forward time in `times`, estimated on the stencil.

    The forward time tau maps to BSDE time t = T - tau with T = times[-1]; the
    slice at tau = 0 is the terminal field sampled on the stencil.
    """
    times = np.asarray(times, dtype=np.float64)
    horizon = float(times[-1])
    points = stencil_points(terminal.grid_shape, terminal.box_length, stride)
    coarse = tuple(n // stride for n in terminal.grid_shape)
    C = terminal.n_components
    estimates = np.zeros((len(times), C) + coarse)
    stderr = np.zeros_like(estimates)
    grid_slice = tuple(slice(None, None, stride) for _ in coarse)
    estimates[0] = terminal.values[(slice(None),) + grid_slice]

    if estimator == "girsanov":
        if source is not None:
            raise ValueError("The Girsanov estimator has no source term; use 'characteristics'")
        h = None if drift is None else drift.map(lambda u: u * (1.0 / math.sqrt(2.0 * nu)))
    elif estimator != "characteristics":
        raise ValueError(f"Unknown estimator '{estimator}'")

    for i in range(1, len(times)):
        t = horizon - float(times[i])
        if estimator == "girsanov":
            mean, err = girsanov_value(batch, h, terminal, points, t, nu, horizon=horizon, workers=workers)
        else:
            mean, err = characteristics_value(batch, drift, terminal, source, points, t, nu,
                                              horizon=horizon, workers=workers)
        estimates[i] = np.asarray(mean).T.reshape((C,) + coarse)
        stderr[i] = np.asarray(err).T.reshape((C,) + coarse)
        logger.debug(f"MC slice {i}/{len(times) - 1} ({estimator}): max stderr {float(np.max(stderr[i])):.3e}")
    return StencilEstimate(stride=stride, times=times, estimates=estimates, stderr=stderr)


def interpolation_error(f: SpectralField) -> float:
    """Sup gap between multilinear and exact spectral values at cell centres."""
    h = f.box_length / np.asarray(f.grid_shape, dtype=np.float64)
    centres = f.grid_points().reshape(f.dim, -1).T + h / 2.0
    approx = interpolate_periodic(f.values, centres, f.box_length)
    exact = translate(f, h / 2.0).values.reshape(f.n_components, -1).T
    return float(np.max(np.abs(approx - exact)))
