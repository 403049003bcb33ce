import configparser
import hashlib
import json
import os
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from models import AlphaModelParams, ConfigError, MonteCarloConfig

# Load environment variables from .env file
load_dotenv()

CODE_VERSION = "1.0.0"

MODES_2D = ("bsde2d", "oracle2d", "crosscheck", "alpha-sweep")
MODES_3D = ("fixedpoint3d", "oracle3d")


class Config:
    # Parallelism (must never change numerical output)
    WORKERS: int = int(os.getenv('NSALPHA_WORKERS', '1'))
    MC_CHUNK: int = int(os.getenv('NSALPHA_MC_CHUNK', '64'))

    # Output
    OUTPUT_DIR: str = os.getenv('NSALPHA_OUTPUT_DIR', 'runs')

    # Logging Configuration
    LOG_LEVEL: str = os.getenv('NSALPHA_LOG_LEVEL', 'INFO')
    LOG_FILE: str = os.getenv('NSALPHA_LOG_FILE', 'nsalpha.log')
    LOG_FORMAT: str = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

    @classmethod
    def validate(cls) -> None:
        problems = []
        if cls.WORKERS < 1:
            problems.append(f"NSALPHA_WORKERS must be >= 1, got {cls.WORKERS}")
        if cls.MC_CHUNK < 1:
            problems.append(f"NSALPHA_MC_CHUNK must be >= 1, got {cls.MC_CHUNK}")
        if problems:
            raise ValueError(f"Invalid environment configuration: {'; '.join(problems)}")

    @classmethod
    def get_runtime_config(cls) -> Dict[str, object]:
        return {
            'workers': cls.WORKERS,
            'mc_chunk': cls.MC_CHUNK,
            'output_dir': cls.OUTPUT_DIR,
            'log_level': cls.LOG_LEVEL,
        }


class _Section(BaseModel):
    model_config = ConfigDict(extra='forbid')


class RunSection(_Section):
    mode: Literal["bsde2d", "fixedpoint3d", "oracle2d", "oracle3d", "crosscheck", "alpha-sweep"]
    seed: Optional[int] = None
    leray_alpha: bool = False


class ModelSection(_Section):
    nu: float = Field(gt=0)
    alpha: float = Field(ge=0)
    T: float = Field(gt=0)
    L: float = Field(default=1.0, gt=0)


class GridSection(_Section):
    n: int = Field(default=64, ge=4)
    dt: float = Field(default=1e-2, gt=0)
    n_steps: Optional[int] = Field(default=None, ge=1)


class InitialSection(_Section):
    family: Literal["single-mode", "two-mode", "random-band", "centered-bump", "file"] = "single-mode"
    amplitude: float = 1.0
    kx: int = 1
    ky: int = 0
    kz: int = 0
    band: int = Field(default=3, ge=1)
    radius: float = Field(default=0.4, gt=0)
    seed: int = 0
    path: Optional[str] = None


class MonteCarloSection(_Section):
    enabled: bool = False
    n_paths: int = Field(default=4000, ge=1)
    dt: float = Field(default=1e-3, gt=0)
    estimator: Literal["girsanov", "characteristics"] = "girsanov"
    stencil_stride: int = Field(default=1, ge=1)
    sigmas: float = Field(default=4.0, gt=0)


class SolverSection(_Section):
    tol: float = Field(default=1e-8, gt=0)
    max_iter: int = Field(default=20, ge=1)
    k: int = Field(default=2, ge=1)
    p: float = Field(default=4.0, gt=1)
    initial_iterate: Literal["constant", "heat"] = "constant"
    oracle_tol: float = Field(default=1e-5, gt=0)
    residual_tol: float = Field(default=1e-4, gt=0)
    shell_tolerance: Optional[float] = Field(default=1e-6, gt=0)

    @field_validator('shell_tolerance', mode='before')
    @classmethod
    def _allow_off(cls, value):
        if isinstance(value, str) and value.strip().lower() in ("none", "off", ""):
            return None
        return value


class OutputSection(_Section):
    directory: Optional[str] = None
    dump_stride: int = Field(default=0, ge=0)


class SweepSection(_Section):
    alphas: List[float] = Field(default_factory=list)

    @field_validator('alphas', mode='before')
    @classmethod
    def _split_list(cls, value):
        if isinstance(value, str):
            return [float(item) for item in value.replace(';', ',').split(',') if item.strip()]
        return value

    @field_validator('alphas')
    @classmethod
    def _non_negative(cls, value):
        if any(a < 0 for a in value):
            raise ValueError("alphas must be non-negative")
        return value


class ExperimentConfig(_Section):
    run: RunSection
    model: ModelSection
    grid: GridSection = Field(default_factory=GridSection)
    initial: InitialSection = Field(default_factory=InitialSection)
    monte_carlo: MonteCarloSection = Field(default_factory=MonteCarloSection)
    solver: SolverSection = Field(default_factory=SolverSection)
    output: OutputSection = Field(default_factory=OutputSection)
    sweep: SweepSection = Field(default_factory=SweepSection)

    @model_validator(mode='after')
    def _check_consistency(self):
        uses_mc = self.run.mode == "crosscheck" or (
            self.monte_carlo.enabled and self.run.mode in ("bsde2d", "fixedpoint3d"))
        if uses_mc and self.run.seed is None:
            raise ValueError("run.seed is mandatory for Monte-Carlo modes")
        if self.initial.family == "file" and not self.initial.path:
            raise ValueError("initial.path is required when initial.family = file")
        return self

    @property
    def dim(self) -> int:
        return 3 if self.run.mode in MODES_3D else 2

    @property
    def n_steps(self) -> int:
        if self.grid.n_steps is not None:
            return self.grid.n_steps
        return max(1, int(round(self.model.T / self.grid.dt)))

    def params(self) -> AlphaModelParams:
        return AlphaModelParams(nu=self.model.nu, alpha=self.model.alpha, T=self.model.T,
                                d=self.dim, L=self.model.L)

    def mc_config(self) -> Optional[MonteCarloConfig]:
        if not (self.monte_carlo.enabled or self.run.mode == "crosscheck"):
            return None
        return MonteCarloConfig(n_paths=self.monte_carlo.n_paths, dt=self.monte_carlo.dt,
                                seed=int(self.run.seed), estimator=self.monte_carlo.estimator,
                                stencil_stride=self.monte_carlo.stencil_stride)

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode='json'), sort_keys=True, separators=(',', ':'))

    def content_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode('utf-8')).hexdigest()


def _error_path(loc) -> str:
    return '.'.join(str(part) for part in loc)


def build_experiment_config(raw: Dict[str, Dict[str, object]]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        field_errors = {_error_path(err['loc']) or 'config': err['msg'] for err in e.errors()}
        details = '; '.join(f"{name}: {msg}" for name, msg in field_errors.items())
        raise ConfigError(f"Invalid experiment config: {details}", field_errors)


def parse_overrides(overrides: Iterable[str]) -> Dict[str, Dict[str, str]]:
    parsed: Dict[str, Dict[str, str]] = {}
    for item in overrides:
        if '=' not in item:
            raise ConfigError(f"Override '{item}' is not of the form section.key=value",
                              {item: "expected section.key=value"})
        key, value = item.split('=', 1)
        if '.' not in key:
            raise ConfigError(f"Override key '{key}' has no section",
                              {key: "expected section.key"})
        section, name = key.strip().split('.', 1)
        parsed.setdefault(section, {})[name.strip()] = value.strip()
    return parsed


def read_config_text(text: str) -> Dict[str, Dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"Malformed config file: {e}")
    return {section: dict(parser.items(section)) for section in parser.sections()}


def load_experiment_config(path: Optional[str] = None, overrides: Iterable[str] = (),
                           text: Optional[str] = None) -> ExperimentConfig:
    """
    Load a key=value config with [section] headers and apply overrides.

    Args:
        path: Config file path (ignored when `text` is given)
        overrides: `section.key=value` strings; these win over the file
        text: Config contents, for callers that already hold them

    Returns:
        Validated ExperimentConfig
    """
    if text is None:
        if path is None:
            raise ConfigError("No config path given")
        config_path = Path(path)
        if not config_path.exists():
            raise ConfigError(f"Config file {path} not found", {'path': 'file not found'})
        text = config_path.read_text(encoding='utf-8')

    raw = read_config_text(text)
    for section, values in parse_overrides(overrides).items():
        raw.setdefault(section, {}).update(values)
    return build_experiment_config(raw)
