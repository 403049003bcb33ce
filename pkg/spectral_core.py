"""
Spectral calculus on uniform periodic grids.

Convention: f(x) = (1/N) sum_k f_k exp(2 pi i <k, x> / L) with the unnormalized
forward sum f_k = sum_x f(x) exp(-2 pi i <k, x> / L), which is numpy's fftn.
Every multiplier below is derived from Laplacian(e_k) = -(2 pi |k| / L)^2 e_k.
"""

import itertools
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from models import AxisOutOfRange, NonZeroMean, NotDivergenceFree

logger = logging.getLogger(__name__)

MEAN_TOL = 1e-10
DIVERGENCE_TOL = 1e-8


class SpectralField:
    """
    Scalar or vector field on a uniform periodic grid.

    Values are stored as (n_components, *grid_shape). Grid samples and Fourier
    coefficients are synchronized lazily; whichever one the field was built from
    is authoritative and the other is computed on first access.
    """

    def __init__(self, values: Optional[np.ndarray] = None, coeffs: Optional[np.ndarray] = None,
                 box_length: float = 1.0, mean_zero: bool = False, divergence_free: bool = False):
        if (values is None) == (coeffs is None):
            raise ValueError("Exactly one of values or coeffs must be given")
        data = values if values is not None else coeffs
        if data.ndim not in (3, 4):
            raise ValueError(f"Expected (n_components, *grid) with 2 or 3 grid axes, got shape {data.shape}")
        self._values = None if values is None else _readonly(np.asarray(values, dtype=np.float64))
        self._coeffs = None if coeffs is None else _readonly(np.asarray(coeffs, dtype=np.complex128))
        self.box_length = float(box_length)
        self.mean_zero = mean_zero
        self.divergence_free = divergence_free

    @classmethod
    def from_values(cls, values: np.ndarray, box_length: float = 1.0, dim: Optional[int] = None,
                    **flags) -> "SpectralField":
        """Scalar grids may omit the component axis; vector grids must pass `dim`."""
        values = np.asarray(values, dtype=np.float64)
        dim = dim or values.ndim
        if values.ndim == dim:
            values = values[np.newaxis]
        elif values.ndim != dim + 1:
            raise ValueError(f"Shape {values.shape} does not describe a {dim}D field")
        return cls(values=values, box_length=box_length, **flags)

    @classmethod
    def from_coeffs(cls, coeffs: np.ndarray, box_length: float = 1.0, **flags) -> "SpectralField":
        return cls(coeffs=coeffs, box_length=box_length, **flags)

    @classmethod
    def zeros(cls, grid_shape: Sequence[int], box_length: float = 1.0,
              n_components: int = 1) -> "SpectralField":
        shape = (n_components,) + tuple(grid_shape)
        return cls(values=np.zeros(shape), box_length=box_length, mean_zero=True, divergence_free=True)

    @classmethod
    def stack(cls, components: Sequence["SpectralField"], **flags) -> "SpectralField":
        first = components[0]
        coeffs = np.concatenate([c.coeffs for c in components], axis=0)
        return cls(coeffs=coeffs, box_length=first.box_length, **flags)

    @property
    def values(self) -> np.ndarray:
        if self._values is None:
            axes = tuple(range(1, self._coeffs.ndim))
            self._values = _readonly(np.fft.ifftn(self._coeffs, axes=axes).real)
        return self._values

    @property
    def coeffs(self) -> np.ndarray:
        if self._coeffs is None:
            axes = tuple(range(1, self._values.ndim))
            self._coeffs = _readonly(np.fft.fftn(self._values, axes=axes))
        return self._coeffs

    @property
    def grid_shape(self) -> Tuple[int, ...]:
        data = self._values if self._values is not None else self._coeffs
        return tuple(data.shape[1:])

    @property
    def n_components(self) -> int:
        data = self._values if self._values is not None else self._coeffs
        return data.shape[0]

    @property
    def dim(self) -> int:
        return len(self.grid_shape)

    @property
    def n_points(self) -> int:
        return int(np.prod(self.grid_shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod([self.box_length / n for n in self.grid_shape]))

    @property
    def is_vector(self) -> bool:
        return self.n_components == self.dim and self.n_components > 1

    def component(self, index: int) -> "SpectralField":
        return SpectralField(coeffs=self.coeffs[index:index + 1], box_length=self.box_length,
                             mean_zero=self.mean_zero)

    def components(self) -> List["SpectralField"]:
        return [self.component(i) for i in range(self.n_components)]

    def grid_points(self) -> np.ndarray:
        return grid_points(self.grid_shape, self.box_length)

    def mean(self) -> np.ndarray:
        return self.coeffs[(slice(None),) + (0,) * self.dim].real / self.n_points

    def with_flags(self, **flags) -> "SpectralField":
        state = {'mean_zero': self.mean_zero, 'divergence_free': self.divergence_free}
        state.update(flags)
        if self._values is not None:
            copy = SpectralField(values=self._values, box_length=self.box_length, **state)
        else:
            copy = SpectralField(coeffs=self._coeffs, box_length=self.box_length, **state)
        # both caches carry over so grid values stay bit-identical
        copy._coeffs = self._coeffs
        return copy

    def remove_mean(self) -> "SpectralField":
        coeffs = self.coeffs.copy()
        coeffs[(slice(None),) + (0,) * self.dim] = 0.0
        return SpectralField(coeffs=coeffs, box_length=self.box_length, mean_zero=True,
                             divergence_free=self.divergence_free)

    def _combine(self, other: "SpectralField", op) -> "SpectralField":
        _check_compatible(self, other)
        flags = {'mean_zero': self.mean_zero and other.mean_zero,
                 'divergence_free': self.divergence_free and other.divergence_free}
        if self._values is not None and other._values is not None and (
                self._coeffs is None or other._coeffs is None):
            return SpectralField(values=op(self._values, other._values), box_length=self.box_length, **flags)
        return SpectralField(coeffs=op(self.coeffs, other.coeffs), box_length=self.box_length, **flags)

    def __add__(self, other: "SpectralField") -> "SpectralField":
        return self._combine(other, np.add)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        return self._combine(other, np.subtract)

    def __mul__(self, scalar: float) -> "SpectralField":
        if self._coeffs is not None:
            return SpectralField(coeffs=self._coeffs * scalar, box_length=self.box_length,
                                 mean_zero=self.mean_zero, divergence_free=self.divergence_free)
        return SpectralField(values=self._values * scalar, box_length=self.box_length,
                             mean_zero=self.mean_zero, divergence_free=self.divergence_free)

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return self * -1.0

    def __repr__(self) -> str:
        return (f"SpectralField(dim={self.dim}, n_components={self.n_components}, "
                f"grid_shape={self.grid_shape}, box_length={self.box_length}, "
                f"mean_zero={self.mean_zero}, divergence_free={self.divergence_free})")


@dataclass
class FieldTrajectory:
    """Time-indexed fields on a uniform time grid starting at t=0."""
    times: np.ndarray
    slices: List[SpectralField]
    _stack: Optional[np.ndarray] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        if len(self.times) != len(self.slices):
            raise ValueError(f"{len(self.times)} times for {len(self.slices)} slices")
        if len(self.times) > 1:
            steps = np.diff(self.times)
            if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
                raise ValueError("Trajectory times must be uniformly spaced")

    @classmethod
    def constant(cls, f: SpectralField, times: np.ndarray) -> "FieldTrajectory":
        return cls(times=np.asarray(times), slices=[f] * len(times))

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def __len__(self) -> int:
        return len(self.slices)

    def __getitem__(self, index: int) -> SpectralField:
        return self.slices[index]

    def index_at(self, t: float) -> int:
        """Slice index at or just below t (left endpoint rule)."""
        if len(self.times) == 1:
            return 0
        index = int(np.floor((t - self.times[0]) / self.dt + 1e-9))
        return min(max(index, 0), len(self.times) - 1)

    def at(self, t: float) -> SpectralField:
        return self.slices[self.index_at(t)]

    def interpolated(self, t: float) -> SpectralField:
        """Linear interpolation in time between neighbouring slices."""
        if len(self.times) == 1:
            return self.slices[0]
        s = (t - self.times[0]) / self.dt
        i = min(max(int(np.floor(s + 1e-12)), 0), len(self.times) - 2)
        w = min(max(s - i, 0.0), 1.0)
        if w < 1e-12:
            return self.slices[i]
        if w > 1.0 - 1e-12:
            return self.slices[i + 1]
        return self.slices[i] * (1.0 - w) + self.slices[i + 1] * w

    def covers(self, t0: float, t1: float) -> bool:
        eps = 1e-9 * max(1.0, abs(self.horizon))
        return t0 >= self.times[0] - eps and t1 <= self.times[-1] + eps

    def values_stack(self) -> np.ndarray:
        if self._stack is None:
            self._stack = np.stack([s.values for s in self.slices])
        return self._stack

    def map(self, fn) -> "FieldTrajectory":
        return FieldTrajectory(times=self.times.copy(), slices=[fn(s) for s in self.slices])

    def sup(self, fn) -> float:
        return max(float(fn(s)) for s in self.slices)


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def _check_compatible(a: SpectralField, b: SpectralField) -> None:
    if a.grid_shape != b.grid_shape or a.n_components != b.n_components or a.box_length != b.box_length:
        raise ValueError(f"Incompatible fields: {a!r} vs {b!r}")


def _like(f: SpectralField, coeffs: np.ndarray, **flags) -> SpectralField:
    return SpectralField(coeffs=coeffs, box_length=f.box_length, **flags)


# Wavenumber tables

@lru_cache(maxsize=64)
def integer_modes(grid_shape: Tuple[int, ...]) -> Tuple[np.ndarray, ...]:
    """Integer lattice indices per axis, shaped to broadcast over the grid."""
    dim = len(grid_shape)
    modes = []
    for axis, n in enumerate(grid_shape):
        k = np.fft.fftfreq(n, d=1.0 / n)
        shape = [1] * dim
        shape[axis] = n
        modes.append(_readonly(k.reshape(shape)))
    return tuple(modes)


@lru_cache(maxsize=64)
def wavevectors(grid_shape: Tuple[int, ...], box_length: float) -> Tuple[np.ndarray, ...]:
    return tuple(_readonly(2.0 * np.pi * k / box_length) for k in integer_modes(grid_shape))


@lru_cache(maxsize=64)
def wavenumber_squared(grid_shape: Tuple[int, ...], box_length: float) -> np.ndarray:
    kappa = wavevectors(grid_shape, box_length)
    return _readonly(sum(k ** 2 for k in kappa))


@lru_cache(maxsize=64)
def inverse_wavenumber_squared(grid_shape: Tuple[int, ...], box_length: float) -> np.ndarray:
    k2 = wavenumber_squared(grid_shape, box_length)
    inv = np.zeros_like(k2)
    nonzero = k2 > 0
    inv[nonzero] = 1.0 / k2[nonzero]
    return _readonly(inv)


@lru_cache(maxsize=256)
def derivative_multiplier(grid_shape: Tuple[int, ...], box_length: float, axis: int, order: int) -> np.ndarray:
    kappa = wavevectors(grid_shape, box_length)[axis]
    mult = (1j * kappa) ** order
    n = grid_shape[axis]
    if order % 2 == 1 and n % 2 == 0:
        # the Nyquist mode has no real odd derivative
        nyquist = integer_modes(grid_shape)[axis] == -(n // 2)
        mult = np.where(nyquist, 0.0, mult)
    return _readonly(np.asarray(mult, dtype=np.complex128))


@lru_cache(maxsize=64)
def dealias_mask(grid_shape: Tuple[int, ...]) -> np.ndarray:
    mask = np.ones(grid_shape, dtype=bool)
    for k, n in zip(integer_modes(grid_shape), grid_shape):
        mask = mask & (np.abs(k) < n / 3.0)
    return _readonly(mask)


@lru_cache(maxsize=64)
def heat_multiplier(grid_shape: Tuple[int, ...], box_length: float, nu_t: float) -> np.ndarray:
    return _readonly(np.exp(-nu_t * wavenumber_squared(grid_shape, box_length)))


def grid_points(grid_shape: Sequence[int], box_length: float = 1.0) -> np.ndarray:
    """Grid coordinates with shape (dim, *grid_shape)."""
    axes = [np.arange(n) * (box_length / n) for n in grid_shape]
    return np.stack(np.meshgrid(*axes, indexing='ij'))


# Flags and checks

def _zero_mode_index(f: SpectralField):
    return (slice(None),) + (0,) * f.dim


def check_mean_zero(f: SpectralField, rtol: float = MEAN_TOL) -> None:
    coeffs = f.coeffs
    scale = float(np.max(np.abs(coeffs))) if coeffs.size else 0.0
    zero_mode = float(np.max(np.abs(coeffs[_zero_mode_index(f)])))
    if zero_mode > rtol * scale and zero_mode > 1e-14 * f.n_points:
        raise NonZeroMean(f"Field mean {zero_mode / f.n_points:.3e} exceeds tolerance "
                          f"(relative {zero_mode / scale:.3e} > {rtol:.1e})")


def divergence_defect_spectral(f: SpectralField) -> float:
    """max_k |sum_j i kappa_j u_j(k)| relative to the largest mode magnitude."""
    div = sum(derivative_multiplier(f.grid_shape, f.box_length, j, 1) * f.coeffs[j]
              for j in range(f.dim))
    scale = float(np.max(np.abs(f.coeffs)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(div)) / scale)


def check_divergence_free(f: SpectralField, rtol: float = DIVERGENCE_TOL) -> None:
    if not f.is_vector:
        raise ValueError(f"Divergence needs a vector field, got {f!r}")
    defect = divergence_defect_spectral(f)
    if defect > rtol:
        raise NotDivergenceFree(f"Field divergence {defect:.3e} exceeds tolerance {rtol:.1e}")


# Differential operators

def derivative(f: SpectralField, axis: int, order: int = 1) -> SpectralField:
    if not 0 <= axis < f.dim:
        raise AxisOutOfRange(f"Axis {axis} out of range for a {f.dim}-dimensional field")
    if order < 1:
        raise ValueError(f"Derivative order must be positive, got {order}")
    mult = derivative_multiplier(f.grid_shape, f.box_length, axis, order)
    return _like(f, f.coeffs * mult, mean_zero=True)


def laplacian(f: SpectralField) -> SpectralField:
    k2 = wavenumber_squared(f.grid_shape, f.box_length)
    return _like(f, -k2 * f.coeffs, mean_zero=True, divergence_free=f.divergence_free)


def gradient(f: SpectralField) -> SpectralField:
    if f.n_components != 1:
        raise ValueError(f"Gradient needs a scalar field, got {f.n_components} components")
    coeffs = np.stack([f.coeffs[0] * derivative_multiplier(f.grid_shape, f.box_length, j, 1)
                       for j in range(f.dim)])
    return _like(f, coeffs, mean_zero=True)


def divergence(f: SpectralField) -> SpectralField:
    if not f.is_vector:
        raise ValueError(f"Divergence needs a vector field, got {f!r}")
    coeffs = sum(f.coeffs[j] * derivative_multiplier(f.grid_shape, f.box_length, j, 1)
                 for j in range(f.dim))
    return _like(f, coeffs[np.newaxis], mean_zero=True)


def curl(f: SpectralField) -> SpectralField:
    """Scalar curl of a 2D vector field, or the vector curl of a 3D one."""
    d = lambda comp, axis: f.coeffs[comp] * derivative_multiplier(f.grid_shape, f.box_length, axis, 1)
    if f.dim == 2 and f.n_components == 2:
        return _like(f, (d(1, 0) - d(0, 1))[np.newaxis], mean_zero=True)
    if f.dim == 3 and f.n_components == 3:
        coeffs = np.stack([d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1)])
        return _like(f, coeffs, mean_zero=True, divergence_free=True)
    raise ValueError(f"Curl is defined for 2D or 3D vector fields, got {f!r}")


def vorticity(u: SpectralField) -> SpectralField:
    """omega = d1 u2 - d2 u1 for a 2D velocity."""
    return curl(u)


def helmholtz_inverse(f: SpectralField, alpha: float) -> SpectralField:
    """(I - alpha^2 Laplacian)^{-1}; the multiplier never vanishes."""
    if alpha == 0:
        return f
    k2 = wavenumber_squared(f.grid_shape, f.box_length)
    return _like(f, f.coeffs / (1.0 + alpha ** 2 * k2), mean_zero=f.mean_zero,
                 divergence_free=f.divergence_free)


def helmholtz_forward(f: SpectralField, alpha: float) -> SpectralField:
    if alpha == 0:
        return f
    k2 = wavenumber_squared(f.grid_shape, f.box_length)
    return _like(f, f.coeffs * (1.0 + alpha ** 2 * k2), mean_zero=f.mean_zero,
                 divergence_free=f.divergence_free)


def heat_flow(f: SpectralField, nu: float, t: float) -> SpectralField:
    """exp(t nu Laplacian) applied per mode."""
    mult = heat_multiplier(f.grid_shape, f.box_length, float(nu * t))
    return _like(f, f.coeffs * mult, mean_zero=f.mean_zero, divergence_free=f.divergence_free)


def biot_savart(omega: SpectralField) -> SpectralField:
    """
    Velocity u = (K1 omega, K2 omega) with Laplacian u1 = -d2 omega and
    Laplacian u2 = d1 omega, zero mean.

    Raises:
        NonZeroMean: If omega has a mean component
    """
    if omega.dim != 2 or omega.n_components != 1:
        raise ValueError(f"Biot-Savart needs a 2D scalar field, got {omega!r}")
    check_mean_zero(omega)
    inv_k2 = inverse_wavenumber_squared(omega.grid_shape, omega.box_length)
    w = omega.coeffs[0] * inv_k2
    d1 = derivative_multiplier(omega.grid_shape, omega.box_length, 0, 1)
    d2 = derivative_multiplier(omega.grid_shape, omega.box_length, 1, 1)
    # u1 = i kappa2 w_hat / |kappa|^2, u2 = -i kappa1 w_hat / |kappa|^2
    coeffs = np.stack([d2 * w, -d1 * w])
    return _like(omega, coeffs, mean_zero=True, divergence_free=True)


def k_tilde_alpha(q: SpectralField, alpha: float) -> SpectralField:
    return biot_savart(helmholtz_inverse(q, alpha))


def newtonian_potential(f: SpectralField) -> SpectralField:
    """
    Periodic mean-free inverse Laplacian, so that Laplacian(N f) = f.

    Raises:
        NonZeroMean: The whole-space kernel has no periodic analogue at mode 0
    """
    if f.n_components != 1:
        raise ValueError(f"Newtonian potential acts on scalar fields, got {f.n_components} components")
    check_mean_zero(f)
    inv_k2 = inverse_wavenumber_squared(f.grid_shape, f.box_length)
    return _like(f, -f.coeffs * inv_k2, mean_zero=True)


def leray_project(m: SpectralField) -> SpectralField:
    """
    P m = m - grad N (div m).

    Built as the orthogonal projector on the first-derivative symbol d, which
    coincides with the composition away from the Nyquist band and stays exactly
    idempotent on it.
    """
    if not m.is_vector:
        raise ValueError(f"Leray projection needs a vector field, got {m!r}")
    d = [derivative_multiplier(m.grid_shape, m.box_length, j, 1) for j in range(m.dim)]
    d2 = sum((dj * dj.conj()).real for dj in d)
    inv_d2 = np.zeros_like(d2)
    inv_d2[d2 > 0] = 1.0 / d2[d2 > 0]
    div = sum(d[j] * m.coeffs[j] for j in range(m.dim))
    projected = np.stack([m.coeffs[j] + d[j] * div * inv_d2 for j in range(m.dim)])
    return _like(m, projected, mean_zero=m.mean_zero, divergence_free=True)


# Products

def dealias(f: SpectralField) -> SpectralField:
    mask = dealias_mask(f.grid_shape)
    return _like(f, f.coeffs * mask, mean_zero=f.mean_zero, divergence_free=f.divergence_free)


def multiply(a: SpectralField, b: SpectralField) -> SpectralField:
    """Pointwise product (scalar*scalar, scalar*vector or componentwise) with 2/3-rule truncation."""
    if a.grid_shape != b.grid_shape or a.box_length != b.box_length:
        raise ValueError(f"Incompatible fields: {a!r} vs {b!r}")
    product = a.values * b.values
    axes = tuple(range(1, product.ndim))
    coeffs = np.fft.fftn(product, axes=axes) * dealias_mask(a.grid_shape)
    return _like(a, coeffs)


def advection(u: SpectralField, f: SpectralField) -> SpectralField:
    """(u . grad) f for scalar or vector f, dealiased."""
    result = None
    for j in range(u.dim):
        term = multiply(u.component(j), derivative(f, j))
        result = term if result is None else result + term
    return result


def pressure_source(v: SpectralField, alpha: float, leray_alpha: bool = False) -> SpectralField:
    """
    Right-hand side G of the pressure Poisson equation for the filtered velocity v.

    NS-alpha:  G = sum_ij [d_i v^j d_j (v^i - a^2 Lap v^i) - a^2 d_ii v^j Lap v^j - a^2 d_i v^j Lap d_i v^j]
    Leray-alpha: G = sum_ij d_i v^j d_j m^i with m = (I - a^2 Lap) v
    """
    m = helmholtz_forward(v, alpha)
    dv = [[derivative(v.component(j), i) for j in range(v.dim)] for i in range(v.dim)]
    terms = []
    for i in range(v.dim):
        for j in range(v.dim):
            terms.append(multiply(dv[i][j], derivative(m.component(i), j)))
    if not leray_alpha and alpha > 0:
        lap_v = laplacian(v)
        a2 = alpha ** 2
        for j in range(v.dim):
            lap_vj = lap_v.component(j)
            terms.append(-a2 * multiply(lap_vj, lap_vj))
            for i in range(v.dim):
                terms.append(-a2 * multiply(dv[i][j], derivative(lap_vj, i)))
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total


def assemble_J(m: SpectralField, alpha: float, leray_alpha: bool = False) -> SpectralField:
    """
    J_v = grad N G_v + a^2 (grad v)^T Lap v with v = (I - a^2 Lap)^{-1} m.

    In Leray-alpha mode the a^2 term is dropped and G is the Leray-alpha source,
    which keeps div J = sum_ij d_i v^j d_j m^i in both modes.

    Raises:
        NotDivergenceFree: If m is not divergence-free
    """
    if not m.is_vector:
        raise ValueError(f"J is assembled from a vector field, got {m!r}")
    check_divergence_free(m)
    m = dealias(m)
    v = helmholtz_inverse(m, alpha)
    source = pressure_source(v, alpha, leray_alpha=leray_alpha)
    check_mean_zero(source, rtol=1e-6)
    J = gradient(newtonian_potential(source.remove_mean()))
    if not leray_alpha and alpha > 0:
        lap_v = laplacian(v)
        extra = []
        for i in range(m.dim):
            row = None
            for j in range(m.dim):
                term = multiply(derivative(v.component(j), i), lap_v.component(j))
                row = term if row is None else row + term
            extra.append(row)
        J = J + alpha ** 2 * SpectralField.stack(extra)
    return J.with_flags(mean_zero=True, divergence_free=False)


def transport_divergence(v: SpectralField, m: SpectralField) -> SpectralField:
    """sum_ij d_i v^j d_j m^i, the divergence of (v . grad) m for divergence-free v."""
    total = None
    for i in range(v.dim):
        for j in range(v.dim):
            term = multiply(derivative(v.component(j), i), derivative(m.component(i), j))
            total = term if total is None else total + term
    return total


# Norms

def lp_norm(f: SpectralField, p: float = 2.0) -> float:
    """Grid quadrature of (integral |f|^p)^(1/p), summed over components."""
    values = f.values
    if np.isinf(p):
        return float(np.max(np.abs(values))) if values.size else 0.0
    return float((np.sum(np.abs(values) ** p) * f.cell_volume) ** (1.0 / p))


def sup_norm(f: SpectralField) -> float:
    return lp_norm(f, np.inf)


def inner_product(f: SpectralField, g: SpectralField) -> float:
    _check_compatible(f, g)
    return float(np.sum(f.values * g.values) * f.cell_volume)


def _multi_indices(dim: int, k: int) -> Iterable[Tuple[int, ...]]:
    for beta in itertools.product(range(k + 1), repeat=dim):
        if sum(beta) <= k:
            yield beta


def sobolev_norm(f: SpectralField, k: int, p: float = 2.0) -> float:
    """(sum_{|beta| <= k} ||d^beta f||_p^p)^(1/p) with spectral derivatives."""
    if k < 0:
        raise ValueError(f"Sobolev order must be non-negative, got {k}")
    total = 0.0
    axes = tuple(range(1, f.dim + 1))
    for beta in _multi_indices(f.dim, k):
        mult = np.ones(f.grid_shape, dtype=np.complex128)
        for axis, order in enumerate(beta):
            if order:
                mult = mult * derivative_multiplier(f.grid_shape, f.box_length, axis, order)
        values = np.fft.ifftn(f.coeffs * mult, axes=axes).real
        total += float(np.sum(np.abs(values) ** p) * f.cell_volume)
    return total ** (1.0 / p)


def neg_sobolev_norm(f: SpectralField) -> float:
    """||f||_{-2,2}^2 = L^d sum_k (1 + |k/L|^2)^{-2} |f_k|^2 over the lattice."""
    modes = integer_modes(f.grid_shape)
    k2 = sum((k / f.box_length) ** 2 for k in modes)
    weight = (1.0 + k2) ** -2
    normalized = f.coeffs / f.n_points
    total = np.sum(weight * np.abs(normalized) ** 2) * f.box_length ** f.dim
    return float(np.sqrt(total))


def poincare_constant(grid_shape: Sequence[int], box_length: float = 1.0) -> float:
    """Smallest nonzero eigenvalue of -Laplacian on the grid."""
    k2 = wavenumber_squared(tuple(grid_shape), float(box_length))
    return float(np.min(k2[k2 > 0]))


def k_tilde_operator_norm(grid_shape: Sequence[int], alpha: float, box_length: float = 1.0) -> float:
    """
    Discrete norm C(alpha) of K~alpha from the lattice ||.||_{-2,2} into L^2:
    sup over nonzero modes of |symbol(k)| (1 + |k|^2).
    """
    grid_shape = tuple(grid_shape)
    k2 = wavenumber_squared(grid_shape, float(box_length))
    lattice_k2 = sum((k / box_length) ** 2 for k in integer_modes(grid_shape))
    nonzero = k2 > 0
    symbol = 1.0 / (np.sqrt(k2[nonzero]) * (1.0 + alpha ** 2 * k2[nonzero]))
    return float(np.max(symbol * (1.0 + lattice_k2[nonzero])))


# Resampling

def translate(f: SpectralField, shift: Sequence[float]) -> SpectralField:
    """g(x) = f(x + shift), exact for band-limited f."""
    phase = np.ones(f.grid_shape, dtype=np.complex128)
    for kappa, s in zip(wavevectors(f.grid_shape, f.box_length), shift):
        phase = phase * np.exp(1j * kappa * s)
    for axis, n in enumerate(f.grid_shape):
        if n % 2 == 0:
            # drop the Nyquist plane, a real shift of it is not representable
            nyquist = integer_modes(f.grid_shape)[axis] == -(n // 2)
            phase = np.where(nyquist, 0.0, phase)
    return _like(f, f.coeffs * phase, mean_zero=f.mean_zero, divergence_free=f.divergence_free)


def fourier_resample(f: SpectralField, grid_shape: Sequence[int]) -> SpectralField:
    """
    Spectral interpolation onto another uniform grid of the same box.

    Modes common to both grids are kept; the Nyquist band of the smaller grid
    is dropped since its sign is ambiguous.
    """
    grid_shape = tuple(grid_shape)
    if grid_shape == f.grid_shape:
        return f
    if len(grid_shape) != f.dim:
        raise ValueError(f"Cannot resample a {f.dim}D field onto {grid_shape}")
    out = np.zeros((f.n_components,) + grid_shape, dtype=np.complex128)
    src_index, dst_index = [], []
    for n_src, n_dst in zip(f.grid_shape, grid_shape):
        keep = (min(n_src, n_dst) - 1) // 2
        modes = np.arange(-keep, keep + 1)
        src_index.append(modes % n_src)
        dst_index.append(modes % n_dst)
    src = np.ix_(*src_index)
    dst = np.ix_(*dst_index)
    scale = float(np.prod(grid_shape)) / float(np.prod(f.grid_shape))
    for c in range(f.n_components):
        out[c][dst] = f.coeffs[c][src] * scale
    return SpectralField(coeffs=out, box_length=f.box_length, mean_zero=f.mean_zero,
                         divergence_free=f.divergence_free)
