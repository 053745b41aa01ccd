# polaron_qrt/config.py
import os
import hashlib
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import ujson

from polaron_qrt.models import (
    BathPreparation, Frame, PropagationOptions, SpectralDensityParams, ValidationError,
    validate_required_fields,
)

# Configure logger for this module
logger = logging.getLogger(__name__)


class Config:
    """Base configuration class"""

    # Logging settings
    LOG_LEVEL = os.environ.get('LOG_LEVEL', 'INFO')
    ENABLE_JSON_LOGGING = os.environ.get('ENABLE_JSON_LOGGING', 'False').lower() == 'true'
    LOG_DIR = os.environ.get('LOG_DIR') or os.path.join(os.getcwd(), 'logs')

    # Output settings
    OUTPUT_ROOT = os.environ.get('OUTPUT_ROOT') or os.path.join(os.getcwd(), 'runs')

    # Parallelism and limits
    DEFAULT_WORKERS = int(os.environ.get('DEFAULT_WORKERS', 1))
    ORACLE_AMPLITUDE_BUDGET = int(os.environ.get('ORACLE_AMPLITUDE_BUDGET', 2_000_000))

    # Kernel tabulation defaults (used when a scenario leaves them out)
    KERNEL_DTAU = float(os.environ.get('KERNEL_DTAU', 0.005))
    KERNEL_T_TABLE = float(os.environ.get('KERNEL_T_TABLE', 200.0))


class DevelopmentConfig(Config):
    """Development configuration"""
    DEBUG = True
    LOG_LEVEL = 'DEBUG'


class ProductionConfig(Config):
    """Production configuration"""
    DEBUG = False
    LOG_LEVEL = 'INFO'
    ENABLE_JSON_LOGGING = True


class TestingConfig(Config):
    """Testing configuration"""
    DEBUG = True
    TESTING = True
    LOG_LEVEL = 'DEBUG'
    LOG_DIR = None
    OUTPUT_ROOT = 'tests/temp_runs'
    KERNEL_DTAU = 0.01
    KERNEL_T_TABLE = 30.0


# Configuration dictionary
config = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
    'default': DevelopmentConfig
}


def get_config():
    """Get configuration based on environment"""
    env = os.environ.get('POLARON_ENV', 'development').lower()
    return config.get(env, config['default'])


# Scenario files

SCENARIO_KINDS = ('variational-scan', 'dynamics', 'spectrum', 'oracle-compare')
MODES = ('corrected', 'uncorrected', 'both')
SWITCHES = ('on', 'off', 'both')


@dataclass
class ScenarioSection:
    name: str = ''
    kind: str = ''
    seed: int = 0
    delta: float = 1.0
    description: str = ''


@dataclass
class BathSection:
    alpha: Optional[float] = None
    nu_c: Optional[float] = None
    s: Optional[float] = None
    beta: Optional[float] = None


@dataclass
class FrameSection:
    kind: str = 'variational'
    mixing: float = 0.5
    tolerance: float = 1e-10
    max_iterations: int = 500


@dataclass
class KernelSection:
    dtau: Optional[float] = None
    t_table: Optional[float] = None
    nu_max_factor: float = 40.0
    panel_nodes: int = 16
    memory_tolerance: float = 1e-7
    max_memory_time: float = 50.0


@dataclass
class DynamicsSection:
    dt: float = 0.01
    t_final: float = 50.0
    initial_state: str = 'excited'
    bath_prep: str = 'thermal'
    inhomogeneous: str = 'on'
    mode: str = 'both'
    history_stride: float = 0.02
    store_every: int = 1
    kernel_window: str = 'saturate'


@dataclass
class SpectrumSection:
    tau_max: float = 150.0
    dtau: float = 0.05
    omega_min: float = -2.0
    omega_max: float = 20.0
    n_omega: int = 2201
    window: str = 'none'
    decay_target: float = 1e-3
    mode: str = 'both'
    inhomogeneous: str = 'on'


@dataclass
class ScanSection:
    alphas: List[float] = field(default_factory=lambda: [0.01 * k for k in range(1, 41)])
    s_values: List[float] = field(default_factory=lambda: [1.0, 1.5, 2.0, 3.0])
    directions: List[str] = field(default_factory=lambda: ['up', 'down'])
    czz_t_max: float = 200.0
    czz_dtau: float = 0.05


@dataclass
class OracleSection:
    N: int = 6
    n_max: int = 4
    band: float = 0.0  # 0 selects 10 nu_c
    ensemble: str = 'enumerate'
    n_samples: int = 64
    tail_tol: float = 1e-3
    t_final: float = 2.0
    dt: float = 0.02
    t_relax: float = 20.0
    budget: int = 0  # 0 falls back to ORACLE_AMPLITUDE_BUDGET
    recurrence: str = 'enforce'
    agreement_tol: float = 0.02
    hook_time: float = -1.0  # < 0 disables the two-time sigma_x hook


@dataclass
class OutputSection:
    directory: str = ''
    write_kernels: bool = False


SECTIONS = {
    'scenario': ScenarioSection,
    'bath': BathSection,
    'frame': FrameSection,
    'kernels': KernelSection,
    'dynamics': DynamicsSection,
    'spectrum': SpectrumSection,
    'scan': ScanSection,
    'oracle': OracleSection,
    'output': OutputSection,
}

REQUIRED_FIELDS = {
    'scenario': ['name', 'kind'],
    'bath': ['alpha', 'nu_c', 's', 'beta'],
}


def _coerce(value: Any, template: Any, where: str, errors: List[str]) -> Any:
    """Convert a TOML value to the type of the section default"""
    try:
        if isinstance(template, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(template, int) and not isinstance(value, bool):
            if isinstance(value, float) and not value.is_integer():
                raise TypeError
            return int(value)
        if isinstance(template, float) or template is None:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if isinstance(template, str):
            if not isinstance(value, str):
                raise TypeError
            return value
        if isinstance(template, list):
            if not isinstance(value, list):
                raise TypeError
            inner = template[0] if template else 0.0
            return [_coerce(v, inner, where, errors) for v in value]
    except (TypeError, ValueError):
        errors.append(f"{where}: expected {type(template).__name__ if template is not None else 'float'}, got {value!r}")
        return template
    return value


def _build_section(name: str, raw: Any, errors: List[str]):
    cls = SECTIONS[name]
    section = cls()
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        errors.append(f"[{name}] must be a table")
        return section
    known = {f.name for f in fields(cls)}
    for key in raw:
        if key not in known:
            errors.append(f"{name}.{key}: unknown field")
    for f in fields(cls):
        # None round-trips an unset optional field from to_dict()
        if raw.get(f.name) is not None:
            setattr(section, f.name, _coerce(raw[f.name], getattr(section, f.name), f"{name}.{f.name}", errors))
    return section


def _check_choice(value: str, choices: Tuple[str, ...], where: str, errors: List[str]):
    if value not in choices:
        errors.append(f"{where}: must be one of {', '.join(choices)} (got {value!r})")


def _check_positive(value: Optional[float], where: str, errors: List[str], strict: bool = True):
    if value is None:
        return
    if (strict and not value > 0) or (not strict and value < 0):
        errors.append(f"{where}: must be {'>' if strict else '>='} 0 (got {value})")


@dataclass
class ScenarioConfig:
    """One scenario file: bath parameters, frame, grids, outputs and seed"""
    scenario: ScenarioSection
    bath: BathSection
    frame: FrameSection
    kernels: KernelSection
    dynamics: DynamicsSection
    spectrum: SpectrumSection
    scan: ScanSection
    oracle: OracleSection
    output: OutputSection
    source: Optional[str] = None

    @classmethod
    def from_dict(cls, data: Dict[str, Any], source: Optional[str] = None) -> 'ScenarioConfig':
        errors: List[str] = []
        data = data or {}
        for key in data:
            if key not in SECTIONS:
                errors.append(f"[{key}]: unknown section")
        sections = {name: _build_section(name, data.get(name), errors) for name in SECTIONS}

        for name, required in REQUIRED_FIELDS.items():
            present = {k: getattr(sections[name], k) for k in required}
            present = {k: (None if v == '' else v) for k, v in present.items()}
            ok, _ = validate_required_fields(present, required)
            if not ok:
                errors.extend(f"{name}.{k}: required field missing" for k in required if present[k] is None)

        cfg = cls(source=source, **sections)
        errors.extend(cfg._semantic_errors())
        if errors:
            raise ValidationError(errors)
        return cfg

    def _semantic_errors(self) -> List[str]:
        errors: List[str] = []
        sc, b, dyn, spec, orc = self.scenario, self.bath, self.dynamics, self.spectrum, self.oracle
        if sc.kind:
            _check_choice(sc.kind, SCENARIO_KINDS, 'scenario.kind', errors)
        _check_positive(sc.delta, 'scenario.delta', errors)
        if b.alpha is not None and b.alpha < 0:
            errors.append(f"bath.alpha: must be >= 0 (got {b.alpha})")
        for key in ('nu_c', 's', 'beta'):
            _check_positive(getattr(b, key), f"bath.{key}", errors)

        _check_choice(self.frame.kind, tuple(f.value for f in Frame), 'frame.kind', errors)
        if not 0 < self.frame.mixing <= 1:
            errors.append(f"frame.mixing: must be in (0, 1] (got {self.frame.mixing})")
        _check_positive(self.kernels.dtau, 'kernels.dtau', errors)
        _check_positive(self.kernels.t_table, 'kernels.t_table', errors)

        _check_positive(dyn.dt, 'dynamics.dt', errors)
        _check_positive(dyn.t_final, 'dynamics.t_final', errors, strict=False)
        _check_choice(dyn.initial_state, ('excited', 'ground'), 'dynamics.initial_state', errors)
        _check_choice(dyn.bath_prep, tuple(p.value for p in BathPreparation), 'dynamics.bath_prep', errors)
        _check_choice(dyn.inhomogeneous, SWITCHES, 'dynamics.inhomogeneous', errors)
        _check_choice(dyn.mode, MODES, 'dynamics.mode', errors)
        _check_choice(dyn.kernel_window, ('saturate', 'strict'), 'dynamics.kernel_window', errors)

        _check_positive(spec.tau_max, 'spectrum.tau_max', errors)
        _check_positive(spec.dtau, 'spectrum.dtau', errors)
        if spec.omega_max <= spec.omega_min:
            errors.append('spectrum.omega_max: must exceed spectrum.omega_min')
        if spec.n_omega < 2:
            errors.append('spectrum.n_omega: must be >= 2')
        _check_choice(spec.window, ('none', 'exponential', 'gaussian', 'auto'), 'spectrum.window', errors)
        _check_choice(spec.mode, MODES, 'spectrum.mode', errors)
        _check_choice(spec.inhomogeneous, SWITCHES, 'spectrum.inhomogeneous', errors)

        if not self.scan.alphas or any(a < 0 for a in self.scan.alphas):
            errors.append('scan.alphas: must be a non-empty list of values >= 0')
        if not self.scan.s_values or any(s <= 0 for s in self.scan.s_values):
            errors.append('scan.s_values: must be a non-empty list of values > 0')
        for d in self.scan.directions:
            _check_choice(d, ('up', 'down'), 'scan.directions', errors)

        if orc.N < 1:
            errors.append('oracle.N: must be >= 1')
        if orc.n_max < 1:
            errors.append('oracle.n_max: must be >= 1')
        _check_choice(orc.ensemble, ('enumerate', 'sample'), 'oracle.ensemble', errors)
        _check_choice(orc.recurrence, ('enforce', 'warn'), 'oracle.recurrence', errors)
        _check_positive(orc.dt, 'oracle.dt', errors)
        _check_positive(orc.t_final, 'oracle.t_final', errors)
        _check_positive(orc.agreement_tol, 'oracle.agreement_tol', errors)
        return errors

    # derived objects

    @property
    def name(self) -> str:
        return self.scenario.name

    @property
    def kind(self) -> str:
        return self.scenario.kind

    def spectral_params(self) -> SpectralDensityParams:
        b = self.bath
        return SpectralDensityParams(alpha=b.alpha, nu_c=b.nu_c, s=b.s, beta=b.beta)

    def propagation_options(self, include_inhomogeneous: bool = True) -> PropagationOptions:
        dyn = self.dynamics
        return PropagationOptions(
            dt=dyn.dt, t_final=dyn.t_final, include_inhomogeneous=include_inhomogeneous,
            frame=Frame(self.frame.kind), kernel_window=dyn.kernel_window, store_every=dyn.store_every,
            bath_preparation=BathPreparation(dyn.bath_prep), history_stride=dyn.history_stride,
        )

    def with_overrides(self, mode: Optional[str] = None, inhomogeneous: Optional[str] = None,
                       output_dir: Optional[str] = None) -> 'ScenarioConfig':
        """Apply command-line flags; the result is validated again"""
        data = self.to_dict()
        if mode is not None:
            data['dynamics']['mode'] = mode
            data['spectrum']['mode'] = mode
        if inhomogeneous is not None:
            data['dynamics']['inhomogeneous'] = inhomogeneous
            data['spectrum']['inhomogeneous'] = inhomogeneous
        if output_dir is not None:
            data['output']['directory'] = output_dir
        return ScenarioConfig.from_dict(data, source=self.source)

    def with_defaults(self, env_config=None) -> 'ScenarioConfig':
        """Fill kernel grid fields left open from the environment configuration"""
        env_config = env_config or get_config()
        kernels = replace(
            self.kernels,
            dtau=self.kernels.dtau if self.kernels.dtau is not None else env_config.KERNEL_DTAU,
            t_table=self.kernels.t_table if self.kernels.t_table is not None else env_config.KERNEL_T_TABLE,
        )
        return replace(self, kernels=kernels)

    def to_dict(self) -> Dict[str, Any]:
        return {name: asdict(getattr(self, name)) for name in SECTIONS}

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form"""
        canonical = ujson.dumps(self.to_dict(), sort_keys=True, escape_forward_slashes=False)
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    """Parse and validate a TOML scenario file"""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"config file not found: {path}")
    try:
        with open(path, 'rb') as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ValidationError(f"{path.name}: invalid TOML ({e})")
    logger.debug(f"Loaded scenario file {path}")
    return ScenarioConfig.from_dict(data, source=str(path))
