# polaron_qrt/models.py
# Shared enumerations, value types and the exception hierarchy

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

# Configure logger for this module
logger = logging.getLogger(__name__)


class PolaronError(Exception):
    """Base error for the simulator"""
    pass


class ValidationError(PolaronError):
    """Invalid parameters or scenario configuration"""

    def __init__(self, errors: Union[str, List[str]]):
        self.errors = [errors] if isinstance(errors, str) else list(errors)
        super().__init__('; '.join(self.errors))


class ConfigurationError(PolaronError):
    """A pipeline stage was invoked without the inputs it needs"""
    pass


class DomainError(PolaronError, ValueError):
    """Argument outside the mathematical domain of an operation"""
    pass


class NumericalError(PolaronError):
    """Numerical failure carrying diagnostics"""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class ConvergenceError(NumericalError):
    """Fixed-point iteration failed to settle"""

    def __init__(self, message: str, trace: List[float]):
        self.trace = list(trace)
        super().__init__(message, {'trace_tail': self.trace[-10:], 'iterations': len(self.trace)})


class ExtrapolationError(NumericalError):
    """Time argument beyond the tabulated kernel range"""
    pass


class UnsupportedKernelError(PolaronError):
    """Correlation index outside the catalog"""
    pass


class BudgetExceededError(PolaronError):
    """Exact oracle problem too large for the amplitude budget"""

    def __init__(self, message: str, suggestion: Dict[str, int]):
        self.suggestion = suggestion
        super().__init__(message)


class Latin(str, Enum):
    """Bath operators of the residual coupling, paired with A_X, A_Y, A_Z"""
    X = 'X'
    Y = 'Y'
    Z = 'Z'


class Greek(str, Enum):
    """Displacement operators B_+ / B_- paired with sigma / sigma^dagger"""
    PLUS = '+'
    MINUS = '-'

    @property
    def sign(self) -> int:
        return 1 if self is Greek.PLUS else -1


BathIndex = Union[Latin, Greek]

LATIN = (Latin.X, Latin.Y, Latin.Z)
GREEK = (Greek.PLUS, Greek.MINUS)


def parse_index(symbol: Union[str, Latin, Greek]) -> BathIndex:
    """Map 'X', 'Y', 'Z', '+', '-' (or enum members) to a bath index"""
    if isinstance(symbol, (Latin, Greek)):
        return symbol
    for enum_cls in (Latin, Greek):
        try:
            return enum_cls(symbol)
        except ValueError:
            continue
    raise UnsupportedKernelError(f"Unknown bath index: {symbol!r}")


class Frame(str, Enum):
    VARIATIONAL = 'variational'
    WEAK = 'weak'
    FULL_POLARON = 'full_polaron'


class ObservableMode(str, Enum):
    CORRECTED = 'corrected'
    UNCORRECTED = 'uncorrected'


class BathPreparation(str, Enum):
    THERMAL = 'thermal'
    DISPLACED_THERMAL = 'displaced_thermal'
    RELAX_PROTOCOL = 'relax_protocol'


def validate_required_fields(data: dict, required_fields: list) -> Tuple[bool, str]:
    """Check that all required keys are present and not None"""
    missing = [f for f in required_fields if data.get(f) is None]
    if missing:
        return False, f"Missing required fields: {', '.join(missing)}"
    return True, ""


@dataclass(frozen=True)
class SpectralDensityParams:
    """Bath parameters: J(nu) = alpha nu^s nu_c^(1-s) exp(-nu/nu_c) at inverse temperature beta"""
    alpha: float
    nu_c: float
    s: float
    beta: float

    def __post_init__(self):
        ok, message = self.validate()
        if not ok:
            raise ValidationError(message)

    def validate(self) -> Tuple[bool, str]:
        problems = []
        if not np.isfinite(self.alpha) or self.alpha < 0:
            problems.append('alpha must be >= 0')
        if not np.isfinite(self.nu_c) or self.nu_c <= 0:
            problems.append('nu_c must be > 0')
        if not np.isfinite(self.s) or self.s <= 0:
            problems.append('s must be > 0')
        if not np.isfinite(self.beta) or self.beta <= 0:
            problems.append('beta must be > 0')
        if problems:
            return False, '; '.join(problems)
        return True, ""

    def with_alpha(self, alpha: float) -> 'SpectralDensityParams':
        return SpectralDensityParams(alpha=alpha, nu_c=self.nu_c, s=self.s, beta=self.beta)

    def to_dict(self) -> Dict[str, float]:
        return {'alpha': self.alpha, 'nu_c': self.nu_c, 's': self.s, 'beta': self.beta}


@dataclass
class PropagationOptions:
    """Integrator settings for the master equation"""
    dt: float = 0.01
    t_final: float = 50.0
    include_inhomogeneous: bool = True
    frame: Frame = Frame.VARIATIONAL
    kernel_window: str = 'saturate'  # 'saturate' freezes the memory integral at T_table, 'strict' raises
    store_every: int = 1
    invariant_tolerance: float = 1e-6
    bath_preparation: BathPreparation = BathPreparation.THERMAL
    history_stride: float = 0.02  # s-step of the inhomogeneous history integrals

    def __post_init__(self):
        problems = []
        if self.dt <= 0:
            problems.append('dt must be > 0')
        if self.history_stride <= 0:
            problems.append('history_stride must be > 0')
        if self.t_final < 0:
            problems.append('t_final must be >= 0')
        if self.kernel_window not in ('saturate', 'strict'):
            problems.append("kernel_window must be 'saturate' or 'strict'")
        if self.store_every < 1:
            problems.append('store_every must be >= 1')
        if problems:
            raise ValidationError(problems)
        self.frame = Frame(self.frame)
        self.bath_preparation = BathPreparation(self.bath_preparation)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def drive_enabled(self) -> bool:
        """Inhomogeneous terms only act on a thermal (unconditioned) initial bath"""
        return self.include_inhomogeneous and self.bath_preparation is BathPreparation.THERMAL


@dataclass
class DensityTrajectory:
    """Interaction-picture reduced states with provenance"""
    times: np.ndarray
    states: np.ndarray  # shape (n, 2, 2), interaction picture w.r.t. H_S = (Delta_R/2) sigma_x
    delta_r: float
    frame: Frame
    inhomogeneous: bool
    rho0: np.ndarray
    min_eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0))
    trace_defects: np.ndarray = field(default_factory=lambda: np.zeros(0))
    hermiticity_defects: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self) -> int:
        return len(self.times)

    def schrodinger_states(self) -> np.ndarray:
        """rho_S(t) = exp(-i H_S t) rho~(t) exp(i H_S t)"""
        from polaron_qrt.system import rotate_states
        return rotate_states(self.states, -self.times, self.delta_r)

    def metadata(self) -> Dict[str, Any]:
        return {
            'frame': self.frame.value,
            'inhomogeneous': self.inhomogeneous,
            'delta_r': self.delta_r,
            'n_states': len(self.times),
            'max_trace_defect': float(np.max(self.trace_defects)) if len(self.trace_defects) else 0.0,
            'max_hermiticity_defect': float(np.max(self.hermiticity_defects)) if len(self.hermiticity_defects) else 0.0,
            'min_eigenvalue': float(np.min(self.min_eigenvalues)) if len(self.min_eigenvalues) else None,
        }


@dataclass
class ResponseRecord:
    """Two-time response and its spectrum"""
    tau_grid: np.ndarray
    S1: np.ndarray  # complex two-time product; the response is its imaginary part
    mode: ObservableMode
    omega_grid: Optional[np.ndarray] = None
    A: Optional[np.ndarray] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def response(self) -> np.ndarray:
        return np.imag(self.S1)
