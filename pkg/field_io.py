"""
AFLD field dumps and CSV exports.

AFLD layout (little-endian): magic b"AFLD", version u32, dim u32,
n_components u32, grid_shape dim x u32, box_length dim x f64, flags u32,
then the (n_components, *grid_shape) samples as row-major f64.
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Sequence

import numpy as np
import pandas as pd

from models import FieldFormatError
from spectral_core import FieldTrajectory, SpectralField

logger = logging.getLogger(__name__)

MAGIC = b"AFLD"
VERSION = 1
FLAG_MEAN_ZERO = 1
FLAG_DIVERGENCE_FREE = 2

_U32 = np.dtype('<u4')
_F64 = np.dtype('<f8')


def encode_field(f: SpectralField) -> bytes:
    flags = (FLAG_MEAN_ZERO if f.mean_zero else 0) | (FLAG_DIVERGENCE_FREE if f.divergence_free else 0)
    header = [
        MAGIC,
        np.array([VERSION, f.dim, f.n_components], dtype=_U32).tobytes(),
        np.array(f.grid_shape, dtype=_U32).tobytes(),
        np.full(f.dim, f.box_length, dtype=_F64).tobytes(),
        np.array([flags], dtype=_U32).tobytes(),
    ]
    body = np.ascontiguousarray(f.values, dtype=_F64).tobytes(order='C')
    return b"".join(header) + body


def decode_field(data: bytes) -> SpectralField:
    if len(data) < 16 or data[:4] != MAGIC:
        raise FieldFormatError("Not an AFLD record (bad magic)")
    version, dim, n_components = np.frombuffer(data, dtype=_U32, count=3, offset=4)
    if version != VERSION:
        raise FieldFormatError(f"Unsupported AFLD version {version}")
    if dim not in (2, 3):
        raise FieldFormatError(f"Unsupported AFLD dimension {dim}")
    offset = 16
    grid_shape = tuple(int(n) for n in np.frombuffer(data, dtype=_U32, count=dim, offset=offset))
    offset += 4 * dim
    box_lengths = np.frombuffer(data, dtype=_F64, count=dim, offset=offset)
    offset += 8 * dim
    flags = int(np.frombuffer(data, dtype=_U32, count=1, offset=offset)[0])
    offset += 4
    count = int(n_components) * int(np.prod(grid_shape))
    if len(data) != offset + 8 * count:
        raise FieldFormatError(f"AFLD payload has {len(data) - offset} bytes, expected {8 * count}")
    if not np.allclose(box_lengths, box_lengths[0]):
        raise FieldFormatError(f"Anisotropic boxes are not supported: {box_lengths}")
    values = np.frombuffer(data, dtype=_F64, count=count, offset=offset).reshape(
        (int(n_components),) + grid_shape).astype(np.float64)
    return SpectralField(values=values, box_length=float(box_lengths[0]),
                         mean_zero=bool(flags & FLAG_MEAN_ZERO),
                         divergence_free=bool(flags & FLAG_DIVERGENCE_FREE))


def write_field(path, f: SpectralField) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_field(f))
    logger.debug(f"Wrote AFLD field {f!r} to {path}")
    return str(path)


def read_field(path) -> SpectralField:
    path = Path(path)
    if not path.exists():
        raise FieldFormatError(f"AFLD file {path} not found")
    return decode_field(path.read_bytes())


def write_trajectory(directory, prefix: str, trajectory: FieldTrajectory, stride: int = 1) -> List[str]:
    """One AFLD file per kept slice; the last slice is always written."""
    stride = max(1, stride)
    indices = list(range(0, len(trajectory), stride))
    if indices[-1] != len(trajectory) - 1:
        indices.append(len(trajectory) - 1)
    return [write_field(Path(directory) / f"{prefix}_{i:05d}.afld", trajectory[i]) for i in indices]


def field_to_frame(f: SpectralField) -> pd.DataFrame:
    points = f.grid_points().reshape(f.dim, -1)
    columns: Dict[str, Any] = {f"x{j}": points[j] for j in range(f.dim)}
    values = f.values.reshape(f.n_components, -1)
    for c in range(f.n_components):
        columns[f"c{c}"] = values[c]
    return pd.DataFrame(columns)


def write_field_csv(path, f: SpectralField) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    field_to_frame(f).to_csv(path, index=False, float_format='%.17g')
    return str(path)


def write_table(path, rows: Sequence[Dict[str, Any]]) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(list(rows)).to_csv(path, index=False, float_format='%.17g')
    return str(path)
