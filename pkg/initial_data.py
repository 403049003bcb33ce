import logging
from typing import Optional, Sequence

import numpy as np

from spectral_core import SpectralField, curl, grid_points, leray_project, sobolev_norm

logger = logging.getLogger(__name__)


def single_mode(grid_shape: Sequence[int], box_length: float = 1.0, k: Sequence[int] = (1, 0),
                amplitude: float = 1.0) -> SpectralField:
    """amplitude * cos(2 pi <k, x> / L)."""
    x = grid_points(grid_shape, box_length)
    phase = sum(2.0 * np.pi * kj * x[j] / box_length for j, kj in enumerate(k))
    return SpectralField.from_values(amplitude * np.cos(phase), box_length, mean_zero=True)


def two_mode(grid_shape: Sequence[int], box_length: float = 1.0, amplitude: float = 1.0) -> SpectralField:
    x = grid_points(grid_shape, box_length)
    values = amplitude * (np.cos(2.0 * np.pi * x[0] / box_length) + np.cos(2.0 * np.pi * x[1] / box_length))
    return SpectralField.from_values(values, box_length, mean_zero=True)


def random_band_field(grid_shape: Sequence[int], box_length: float = 1.0, band: int = 4,
                      n_components: int = 1, seed: int = 0, amplitude: float = 1.0) -> SpectralField:
    """Random real mean-zero field whose modes satisfy 0 < max_j |k_j| <= band."""
    grid_shape = tuple(grid_shape)
    limit = min(band, min(grid_shape) // 3)
    rng = np.random.default_rng(seed)
    shape = (n_components,) + grid_shape
    coeffs = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    modes = np.meshgrid(*[np.fft.fftfreq(n, d=1.0 / n) for n in grid_shape], indexing='ij')
    inside = np.ones(grid_shape, dtype=bool)
    for k in modes:
        inside &= np.abs(k) <= limit
    inside[(0,) * len(grid_shape)] = False
    axes = tuple(range(1, len(shape)))
    values = np.fft.ifftn(coeffs * inside, axes=axes).real
    scale = np.max(np.abs(values))
    if scale > 0:
        values = values * (amplitude / scale)
    return SpectralField(values=values, box_length=box_length, mean_zero=True)


def random_divergence_free_field(grid_shape: Sequence[int], box_length: float = 1.0, band: int = 4,
                                 seed: int = 0, amplitude: float = 1.0) -> SpectralField:
    raw = random_band_field(grid_shape, box_length, band, n_components=len(grid_shape), seed=seed,
                            amplitude=amplitude)
    return leray_project(raw)


def _bump(r2: np.ndarray, radius: float) -> np.ndarray:
    s = r2 / radius ** 2
    out = np.zeros_like(s)
    inside = s < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside]))
    return out


def centered_bump(grid_shape: Sequence[int], box_length: float, radius: float = 0.4,
                  amplitude: Optional[float] = 1.0, k: int = 2, p: float = 4.0) -> SpectralField:
    """
    Divergence-free momentum m0 = curl(phi, phi, phi) for a smooth bump phi of
    compact support centred in the box. With `amplitude` set, m0 is scaled to
    have ||m0||_{W^{k,p}} = amplitude.
    """
    grid_shape = tuple(grid_shape)
    if len(grid_shape) != 3:
        raise ValueError(f"The centred bump is a 3D family, got grid {grid_shape}")
    x = grid_points(grid_shape, box_length)
    r2 = sum((x[j] - box_length / 2.0) ** 2 for j in range(3))
    phi = _bump(r2, radius)
    potential = SpectralField(values=np.stack([phi, phi, phi]), box_length=box_length)
    m0 = curl(potential)
    if amplitude is not None:
        norm = sobolev_norm(m0, k, p)
        if norm > 0:
            m0 = m0 * (amplitude / norm)
    return m0.with_flags(mean_zero=True, divergence_free=True)


def divergence_free_single_mode(grid_shape: Sequence[int], box_length: float = 1.0,
                                amplitude: float = 1.0, k: int = 1) -> SpectralField:
    """m = amplitude * (0, 0, cos(2 pi k x1 / L)) in 3D."""
    x = grid_points(grid_shape, box_length)
    values = np.zeros((3,) + tuple(grid_shape))
    values[2] = amplitude * np.cos(2.0 * np.pi * k * x[0] / box_length)
    return SpectralField(values=values, box_length=box_length, mean_zero=True, divergence_free=True)


def shell_energy_fraction(f: SpectralField) -> float:
    """Energy share outside the central region |x_j - L/2| <= 3L/8 of the box."""
    x = grid_points(f.grid_shape, f.box_length)
    outside = np.zeros(f.grid_shape, dtype=bool)
    for j in range(f.dim):
        outside |= np.abs(x[j] - f.box_length / 2.0) > 3.0 * f.box_length / 8.0
    energy = np.sum(f.values ** 2, axis=0)
    total = float(np.sum(energy))
    if total == 0.0:
        return 0.0
    return float(np.sum(energy[outside]) / total)

