import textwrap

import numpy as np
import pytest

from config import Config
from initial_data import random_band_field, random_divergence_free_field, single_mode
from models import AlphaModelParams


@pytest.fixture(autouse=True)
def single_worker(monkeypatch):
    monkeypatch.setattr(Config, 'WORKERS', 1)
    monkeypatch.setattr(Config, 'MC_CHUNK', 64)


@pytest.fixture
def params_2d():
    return AlphaModelParams(nu=0.05, alpha=0.1, T=0.2, d=2)


@pytest.fixture
def params_3d():
    return AlphaModelParams(nu=0.1, alpha=0.2, T=0.05, d=3)


@pytest.fixture
def cosine_16():
    return single_mode((16, 16), 1.0, (1, 0))


@pytest.fixture
def random_scalar_field():
    def make(n=32, seed=0, band=4, amplitude=1.0):
        return random_band_field((n, n), 1.0, band, seed=seed, amplitude=amplitude)
    return make


@pytest.fixture
def random_momentum():
    def make(n=8, seed=0, band=2, amplitude=0.3, box_length=1.0):
        return random_divergence_free_field((n, n, n), box_length, band, seed=seed, amplitude=amplitude)
    return make


@pytest.fixture
def write_config(tmp_path):
    """Write a key=value config with sections and return its path."""
    def write(body: str, name: str = "experiment.cfg"):
        path = tmp_path / name
        path.write_text(textwrap.dedent(body), encoding='utf-8')
        return path
    return write


def relative_sup(a: np.ndarray, b: np.ndarray) -> float:
    scale = float(np.max(np.abs(b)))
    return float(np.max(np.abs(a - b))) / (scale if scale > 0 else 1.0)
