import hashlib
import json
import os
from pathlib import Path
from typing import Iterable, List, Optional, Tuple, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ValidationError, validator

from .errors import ConfigError

load_dotenv()


class Config:
    LOG_DIR = os.getenv('QCHAOS_LOG_DIR', 'logs')
    LOG_LEVEL = os.getenv('QCHAOS_LOG_LEVEL', 'INFO')
    LOG_MAX_BYTES = 10000000
    LOG_BACKUP_COUNT = 5


class DevelopmentConfig(Config):
    LOG_LEVEL = os.getenv('QCHAOS_LOG_LEVEL', 'DEBUG')


class ProductionConfig(Config):
    LOG_LEVEL = os.getenv('QCHAOS_LOG_LEVEL', 'INFO')


class TestingConfig(Config):
    TESTING = True
    LOG_LEVEL = 'DEBUG'


ENV_CONFIGS = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
}


def get_env_config(name: Optional[str] = None):
    """Config class selected by name or QCHAOS_ENV (default production)."""
    name = name or os.getenv('QCHAOS_ENV', 'production')
    try:
        return ENV_CONFIGS[name]
    except KeyError:
        raise ConfigError(f"Unknown environment '{name}' (expected one of {sorted(ENV_CONFIGS)})")


# --- run configuration --------------------------------------------------------

class _Section(BaseModel):
    class Config:
        extra = 'forbid'
        validate_assignment = True


class ModelSection(_Section):
    """Classical Pullen-Edmonds family: one run per coupling v22."""
    mass: float = 1.0
    v2: float = 0.5
    couplings: List[float] = [0.05, 0.25]

    @validator('mass', 'v2')
    def _positive(cls, value, field):
        if not value > 0:
            raise ValueError(f"{field.name} must be positive")
        return value

    @validator('couplings')
    def _couplings(cls, value):
        if not value:
            raise ValueError("at least one coupling is required")
        if any(v < 0 for v in value):
            raise ValueError("couplings must be non-negative")
        if len(set(value)) != len(value):
            raise ValueError("couplings must be distinct")
        return value


class SolverSection(_Section):
    half_width: float = 6.0
    n_grid: int = 128
    dt: float = 1e-3
    T: float = 4.5
    ground_tol: float = 1e-10
    max_iter: int = 500000

    @validator('half_width', 'dt', 'T', 'ground_tol')
    def _positive(cls, value, field):
        if not value > 0:
            raise ValueError(f"{field.name} must be positive")
        return value

    @validator('n_grid')
    def _grid(cls, value):
        if value < 16:
            raise ValueError("n_grid must be at least 16")
        return value

    @validator('T')
    def _time(cls, value, values):
        if 'dt' in values and value < values['dt']:
            raise ValueError("T must not be smaller than dt")
        return value


class FitSection(_Section):
    lattice_half_width: float = 1.5
    lattice_n: int = 4
    n_nodes: int = 129
    richardson: bool = False
    residual_mode: str = 'log'
    ftol: float = 1e-10
    max_nfev: int = 200
    check_basins: bool = False

    @validator('lattice_n')
    def _lattice(cls, value):
        if value < 4:
            raise ValueError("lattice_n must be at least 4 (10 distinct points are needed)")
        return value

    @validator('n_nodes')
    def _nodes(cls, value):
        if value < 16:
            raise ValueError("n_nodes must be at least 16")
        return value

    @validator('residual_mode')
    def _mode(cls, value):
        if value not in ('log', 'raw'):
            raise ValueError("residual_mode must be 'log' or 'raw'")
        return value


class SectionPlane(_Section):
    coordinate: str = 'y'
    value: float = 0.0
    direction: int = 1

    @validator('coordinate')
    def _coordinate(cls, value):
        if value not in ('x', 'y'):
            raise ValueError("coordinate must be 'x' or 'y'")
        return value

    @validator('direction')
    def _direction(cls, value):
        if value not in (1, -1):
            raise ValueError("direction must be 1 or -1")
        return value


class DynamicsSection(_Section):
    energies: List[float] = [2.0, 4.0, 6.0, 8.0]
    section_energies: List[float] = [2.0, 6.0]
    energy_reference: str = 'minimum'
    n_ensemble: int = 1000
    T_c: float = 20000.0
    dt: float = 1e-3
    renorm_every: int = 100
    seed: int = 20240101
    n_orbits: int = 40
    n_crossings: int = 300
    n_traces: int = 5
    section: SectionPlane = SectionPlane()

    @validator('energies', 'section_energies')
    def _energies(cls, value):
        if not value:
            raise ValueError("at least one energy is required")
        if any(e <= 0 for e in value):
            raise ValueError("energies must be positive")
        return value

    @validator('energy_reference')
    def _reference(cls, value):
        if value not in ('minimum', 'absolute'):
            raise ValueError("energy_reference must be 'minimum' or 'absolute'")
        return value

    @validator('n_ensemble', 'renorm_every', 'n_orbits', 'n_crossings')
    def _count(cls, value, field):
        if value < 1:
            raise ValueError(f"{field.name} must be at least 1")
        return value

    @validator('T_c', 'dt')
    def _positive(cls, value, field):
        if not value > 0:
            raise ValueError(f"{field.name} must be positive")
        return value


class StatsSection(_Section):
    lambda_c: float = 0.005
    sensitivity: List[float] = [0.002, 0.005, 0.01]
    near_zero_window: Tuple[float, float] = (-0.01, 0.05)
    near_zero_bins: int = 60
    positive_window: Tuple[float, float] = (0.0, 0.25)
    positive_bins: int = 50
    mean_over: str = 'mean_chaotic'

    @validator('near_zero_window', 'positive_window')
    def _window(cls, value):
        if not value[0] < value[1]:
            raise ValueError("window must satisfy lo < hi")
        return value

    @validator('near_zero_bins', 'positive_bins')
    def _bins(cls, value):
        if value < 2:
            raise ValueError("at least 2 bins are required")
        return value

    @validator('mean_over')
    def _mean(cls, value):
        if value not in ('mean_chaotic', 'mean_all'):
            raise ValueError("mean_over must be 'mean_chaotic' or 'mean_all'")
        return value


class RunConfig(_Section):
    """Complete configuration of a pipeline run (one YAML file)."""
    model: ModelSection = ModelSection()
    solver: SolverSection = SolverSection()
    fit: FitSection = FitSection()
    dynamics: DynamicsSection = DynamicsSection()
    stats: StatsSection = StatsSection()
    output_dir: str = 'output'

    @validator('fit')
    def _lattice_inside_grid(cls, value, values):
        solver = values.get('solver')
        if solver is not None and value.lattice_half_width >= solver.half_width:
            raise ValueError("fit lattice must lie inside the solver grid")
        return value

    def as_plain(self) -> dict:
        """Nested plain-Python representation (tuples as lists)."""
        return json.loads(self.json())

    def to_yaml(self, path: Optional[Union[str, Path]] = None) -> str:
        text = yaml.safe_dump(self.as_plain(), sort_keys=False, default_flow_style=None)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_yaml(cls, path: Union[str, Path]) -> 'RunConfig':
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config file not found: {path}")
        return cls.from_yaml_text(path.read_text())

    @classmethod
    def from_yaml_text(cls, text: str) -> 'RunConfig':
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise ConfigError(f"Config is not valid YAML: {e}") from e
        if data is not None and not isinstance(data, dict):
            raise ConfigError("Config must be a mapping of sections")
        try:
            return cls.parse_obj(data or {})
        except ValidationError as e:
            raise ConfigError(f"Invalid run configuration:\n{e}") from e

    def section_hash(self, names: Iterable[str]) -> str:
        """sha256 of the canonical JSON of the named sections."""
        plain = self.as_plain()
        selected = {name: plain[name] for name in sorted(set(names))}
        return hashlib.sha256(json.dumps(selected, sort_keys=True).encode()).hexdigest()


def load_config(path: Optional[Union[str, Path]] = None, out_dir: Optional[str] = None,
                seed: Optional[int] = None) -> RunConfig:
    """Read the run configuration and apply command line and environment overrides.

    Precedence for the output directory: explicit argument, QCHAOS_OUT_DIR,
    the file's output_dir.
    """
    config = RunConfig.from_yaml(path) if path is not None else RunConfig()
    out_dir = out_dir or os.getenv('QCHAOS_OUT_DIR')
    updates = {}
    if out_dir:
        updates['output_dir'] = out_dir
    try:
        if updates:
            config = RunConfig.parse_obj({**config.as_plain(), **updates})
        if seed is not None:
            config.dynamics.seed = seed
    except ValidationError as e:
        raise ConfigError(f"Invalid override: {e}") from e
    return config


def resolve_threads(threads: Optional[int] = None) -> int:
    """Explicit value, QCHAOS_THREADS, or the number of available cores."""
    if threads is None:
        env = os.getenv('QCHAOS_THREADS')
        try:
            threads = int(env) if env else 0
        except ValueError:
            raise ConfigError(f"QCHAOS_THREADS must be an integer, got {env!r}")
    if threads < 0:
        raise ConfigError(f"Thread count must be positive, got {threads}")
    return threads or os.cpu_count() or 1
