# polaron_qrt/system.py
# Two-level operator algebra, column-stacking superoperators and the analytic
# interaction-picture rotation under H_S = (Delta_R/2) sigma_x.
#
# Basis {|0>, |1>} with sigma_z = |0><0| - |1><1| and sigma_x = |1><0| + |0><1|.
# vec(X) stacks columns, so vec(A X B) = kron(B.T, A) vec(X).

import logging
from dataclasses import dataclass, field
from typing import Dict, Union

import numpy as np
from scipy.linalg import expm

from polaron_qrt.models import DomainError, Greek, Latin, LATIN, GREEK

# Configure logger for this module
logger = logging.getLogger(__name__)

IDENTITY = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
# sigma = |0><1| carries B_+ in the polaron frame, sigma^dagger = |1><0| carries B_-
SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_PLUS = SIGMA_MINUS.conj().T

GROUND = np.array([[1, 0], [0, 0]], dtype=complex)
EXCITED = np.array([[0, 0], [0, 1]], dtype=complex)

ArrayLike = Union[float, np.ndarray]


def basis_state(level: int) -> np.ndarray:
    """Projector |level><level| for level in {0, 1}"""
    if level not in (0, 1):
        raise DomainError(f"level must be 0 or 1, got {level}")
    return GROUND.copy() if level == 0 else EXCITED.copy()


def vec(op: np.ndarray) -> np.ndarray:
    """Column-stack (..., 2, 2) operators into (..., 4) vectors"""
    op = np.asarray(op)
    return np.swapaxes(op, -1, -2).reshape(op.shape[:-2] + (4,))


def unvec(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v)
    return np.swapaxes(v.reshape(v.shape[:-1] + (2, 2)), -1, -2)


def _kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched Kronecker product of (..., 2, 2) arrays"""
    out = np.einsum('...ij,...kl->...ikjl', a, b)
    return out.reshape(out.shape[:-4] + (4, 4))


def spre(a: np.ndarray) -> np.ndarray:
    """X -> A X"""
    return _kron(np.broadcast_to(IDENTITY, np.shape(a)), a)


def spost(b: np.ndarray) -> np.ndarray:
    """X -> X B"""
    return _kron(np.swapaxes(b, -1, -2), np.broadcast_to(IDENTITY, np.shape(b)))


def sprepost(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """X -> A X B"""
    return _kron(np.swapaxes(b, -1, -2), a)


def commutator_superop(h: np.ndarray) -> np.ndarray:
    """X -> -i [H, X]"""
    return -1j * (spre(h) - spost(h))


def apply_superop(superop: np.ndarray, op: np.ndarray) -> np.ndarray:
    return unvec(superop @ vec(op))


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def dagger(op: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(op, -1, -2))


def pauli_components(op: np.ndarray) -> np.ndarray:
    """Coefficients (c0, cx, cy, cz) with op = c0 I + c . sigma"""
    op = np.asarray(op, dtype=complex)
    return np.stack([
        0.5 * np.einsum('...ii->...', op),
        0.5 * np.einsum('...ij,ji->...', op, SIGMA_X),
        0.5 * np.einsum('...ij,ji->...', op, SIGMA_Y),
        0.5 * np.einsum('...ij,ji->...', op, SIGMA_Z),
    ], axis=-1)


def interaction_picture_op(op: np.ndarray, t: ArrayLike, delta_r: float) -> np.ndarray:
    """
    exp(i H_S t) op exp(-i H_S t) for H_S = (Delta_R/2) sigma_x.

    Rotation about x by theta = Delta_R t:
    sigma_y -> sigma_y cos(theta) - sigma_z sin(theta),
    sigma_z -> sigma_z cos(theta) + sigma_y sin(theta).
    A scalar t returns (2, 2); an array of times returns (n, 2, 2).
    """
    c = pauli_components(op)
    theta = delta_r * np.asarray(t, dtype=float)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    cy = c[..., 2] * cos_t + c[..., 3] * sin_t
    cz = c[..., 3] * cos_t - c[..., 2] * sin_t
    c0 = np.broadcast_to(c[..., 0], np.shape(cy))
    cx = np.broadcast_to(c[..., 1], np.shape(cy))
    return (c0[..., None, None] * IDENTITY + cx[..., None, None] * SIGMA_X
            + cy[..., None, None] * SIGMA_Y + cz[..., None, None] * SIGMA_Z)


def rotate_states(states: np.ndarray, times: np.ndarray, delta_r: float) -> np.ndarray:
    """Apply the rotation to a stack of operators, one time per operator"""
    c = pauli_components(states)
    theta = delta_r * np.asarray(times, dtype=float)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    cy = c[..., 2] * cos_t + c[..., 3] * sin_t
    cz = c[..., 3] * cos_t - c[..., 2] * sin_t
    return (c[..., 0, None, None] * IDENTITY + c[..., 1, None, None] * SIGMA_X
            + cy[..., None, None] * SIGMA_Y + cz[..., None, None] * SIGMA_Z)


def rotation_superop(t: float, delta_r: float) -> np.ndarray:
    """Superoperator of X -> exp(i H_S t) X exp(-i H_S t)"""
    u = expm(0.5j * delta_r * t * SIGMA_X)
    return sprepost(u, u.conj().T)


def coupling_operators(delta: float) -> Dict[Latin, np.ndarray]:
    """A_X = (Delta/2) sigma_x, A_Y = (Delta/2) sigma_y, A_Z = sigma_z"""
    return {
        Latin.X: 0.5 * delta * SIGMA_X,
        Latin.Y: 0.5 * delta * SIGMA_Y,
        Latin.Z: SIGMA_Z.copy(),
    }


def transition_operators() -> Dict[Greek, np.ndarray]:
    """s_+ = sigma = |0><1| and s_- = sigma^dagger = |1><0|"""
    return {Greek.PLUS: SIGMA_MINUS.copy(), Greek.MINUS: SIGMA_PLUS.copy()}


@dataclass
class SystemOperators:
    """Bundle of the system-side operators for a given (Delta, Delta_R)"""
    delta: float
    delta_r: float
    A: Dict[Latin, np.ndarray] = field(init=False)
    s: Dict[Greek, np.ndarray] = field(init=False)

    def __post_init__(self):
        self.A = coupling_operators(self.delta)
        self.s = transition_operators()

    @property
    def hamiltonian(self) -> np.ndarray:
        return 0.5 * self.delta_r * SIGMA_X

    def liouvillian(self) -> np.ndarray:
        return commutator_superop(self.hamiltonian)

    def rotate(self, op: np.ndarray, t: ArrayLike) -> np.ndarray:
        return interaction_picture_op(op, t, self.delta_r)

    def A_at(self, t: ArrayLike) -> Dict[Latin, np.ndarray]:
        return {i: self.rotate(self.A[i], t) for i in LATIN}

    def s_at(self, t: ArrayLike) -> Dict[Greek, np.ndarray]:
        return {a: self.rotate(self.s[a], t) for a in GREEK}


def hermiticity_defect(op: np.ndarray) -> float:
    return float(np.linalg.norm(op - dagger(op)))


def check_density_operator(rho: np.ndarray, tol: float = 1e-9) -> bool:
    """Trace one, Hermitian, eigenvalues in [-tol, 1 + tol]"""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (2, 2):
        return False
    if abs(np.trace(rho) - 1.0) > tol or hermiticity_defect(rho) > tol:
        return False
    evals = np.linalg.eigvalsh(0.5 * (rho + dagger(rho)))
    return bool(evals.min() >= -tol and evals.max() <= 1 + tol)
