from dataclasses import dataclass, field, asdict
from typing import Any, Dict, List, Optional


class SolverError(Exception):
    """Base exception for solver errors"""
    pass


class NonZeroMean(SolverError):
    pass


class NotDivergenceFree(SolverError):
    pass


class AxisOutOfRange(SolverError):
    pass


class ZeroSteps(SolverError):
    pass


class TimeGridMismatch(SolverError):
    pass


class WeightOverflow(SolverError):
    """Girsanov log-weight left the safe range; dt too coarse or drift too large"""
    pass


class NoConvergence(SolverError):
    pass


class HorizonUnderflow(SolverError):
    pass


class CFLViolation(SolverError):
    pass


class TruncationWarning(SolverError):
    """Energy reached the boundary shell of the periodic box standing in for R^d"""
    pass


class FieldFormatError(SolverError):
    pass


class ConfigError(SolverError):
    def __init__(self, message: str, field_errors: Optional[Dict[str, str]] = None):
        super().__init__(message)
        self.field_errors = field_errors or {}


@dataclass(frozen=True)
class AlphaModelParams:
    nu: float
    alpha: float
    T: float
    d: int = 2
    L: float = 1.0

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")
        if self.d not in (2, 3):
            raise ValueError(f"d must be 2 or 3, got {self.d}")
        if not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L}")

    def with_horizon(self, T: float) -> "AlphaModelParams":
        return AlphaModelParams(nu=self.nu, alpha=self.alpha, T=T, d=self.d, L=self.L)

    def with_alpha(self, alpha: float) -> "AlphaModelParams":
        return AlphaModelParams(nu=self.nu, alpha=alpha, T=self.T, d=self.d, L=self.L)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MonteCarloConfig:
    """Path budget for one Monte-Carlo evaluation.

    `stencil_stride` subsamples the grid per axis; values on the coarse stencil
    are Fourier-interpolated back to the full grid.
    """
    n_paths: int
    dt: float
    seed: int
    estimator: str = "girsanov"
    stencil_stride: int = 1

    def __post_init__(self):
        if self.n_paths <= 0:
            raise ValueError(f"n_paths must be positive, got {self.n_paths}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.estimator not in ("girsanov", "characteristics"):
            raise ValueError(f"Unknown estimator '{self.estimator}'")
        if self.stencil_stride < 1:
            raise ValueError(f"stencil_stride must be >= 1, got {self.stencil_stride}")


@dataclass
class RunReport:
    mode: str
    config: Dict[str, Any]
    config_hash: str
    tables: Dict[str, List[Dict[str, Any]]] = field(default_factory=dict)
    verdicts: Dict[str, bool] = field(default_factory=dict)
    n_paths_used: int = 0
    wall_clock_seconds: float = 0.0
    artifacts: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def add_row(self, table: str, row: Dict[str, Any]) -> None:
        self.tables.setdefault(table, []).append(row)

    def to_dict(self) -> dict:
        # wall clock lives in the timing sidecar so this stays reproducible
        return {
            'mode': self.mode,
            'config': self.config,
            'config_hash': self.config_hash,
            'verdicts': self.verdicts,
            'passed': self.passed,
            'n_paths_used': self.n_paths_used,
            'tables': sorted(self.tables.keys()),
            'artifacts': sorted(self.artifacts),
        }
