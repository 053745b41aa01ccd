# polaron_qrt/regression.py
# Two-time dipole response after steady-state preparation and its spectrum.
#
# The response is S1(tau) = Im G(tau) with G(tau) = <sigma_x(tau) sigma_x(0)>_ss.
# In the polaron frame sigma_x = sum_alpha s_alpha B_alpha.  The uncorrected
# (factorized) form is
#     G(tau) = sum_ab C_ab(tau) tr[s_a exp(L tau)(s_b rho_ss)].
# The corrected form propagates a dressed seed under the saturated generator
# with a drive from the correlations created by the measurement and from the
# correlations already present in the steady state, then adds the correlated
# (irrelevant) contributions at the read-out time.  The fourth-order term
# that would need four-time bath correlations is omitted.

import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import expm, null_space

from polaron_qrt.bath import CorrelationTables
from polaron_qrt.logging_config import log_numerical_event, log_run
from polaron_qrt.models import (
    GREEK, LATIN, DomainError, NumericalError, ObservableMode, ResponseRecord,
)
from polaron_qrt.observables import psi_theta
from polaron_qrt.system import (
    IDENTITY, SIGMA_X, SystemOperators, commutator, dagger, hermiticity_defect,
    interaction_picture_op, unvec, vec,
)
from polaron_qrt.tcl2 import drive_horizon, history_grid, saturated_generator

# Configure logger for this module
logger = logging.getLogger(__name__)

WINDOWS = ('none', 'exponential', 'gaussian', 'auto')
TRUNCATION_RATIO = 1e-6


@dataclass
class SteadyState:
    """Stationary state of the saturated generator with cross-check diagnostics"""
    rho: np.ndarray
    degenerate: bool
    null_dimension: int
    relaxation_time: Optional[float] = None
    mismatch: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'rho': [[complex(x) for x in row] for row in self.rho],
            'degenerate': self.degenerate,
            'null_dimension': self.null_dimension,
            'relaxation_time': self.relaxation_time,
            'mismatch': self.mismatch,
        }


def _normalized(v: np.ndarray) -> np.ndarray:
    rho = unvec(v)
    rho = rho / np.trace(rho)
    return 0.5 * (rho + dagger(rho))


def steady_state(tables: CorrelationTables, sysops: SystemOperators, tol: float = 1e-10,
                 t_max: float = 500.0, agreement: float = 1e-8) -> SteadyState:
    """
    Null space of L_inf cross-checked against propagation with doubling
    steps exp(L 2^k) until successive states agree to `tol`.
    """
    L = saturated_generator(tables, sysops)
    ns = null_space(L, rcond=1e-10)
    dim = ns.shape[1]
    if dim > 1:
        logger.info(f"Saturated generator has a {dim}-dimensional null space; returning the maximally mixed state")
        log_numerical_event('degenerate_steady_state', {'null_dimension': dim}, level=logging.INFO)
        return SteadyState(rho=0.5 * IDENTITY, degenerate=True, null_dimension=dim)
    if dim == 0:
        _, _, vh = np.linalg.svd(L)
        v = vh[-1].conj()
    else:
        v = ns[:, 0]
    rho_null = _normalized(v)

    # weak damping needs a propagation window of many relaxation times
    rates = np.abs(np.linalg.eigvals(L).real)
    rates = rates[rates > 1e-12]
    if len(rates):
        t_max = max(t_max, 40.0 / float(rates.min()))

    y = vec(0.5 * IDENTITY)
    step = expm(L)
    t, converged = 1.0, False
    y_next = step @ y
    while t <= t_max:
        if np.linalg.norm(unvec(y_next) - unvec(y)) < tol:
            converged = True
            break
        y = y_next
        step = step @ step
        t *= 2.0
        y_next = step @ y
    if not converged:
        raise NumericalError(f"steady-state propagation did not converge by t = {t_max}",
                             {'t_max': t_max, 'tol': tol})
    rho_prop = _normalized(y_next)
    mismatch = float(np.linalg.norm(rho_prop - rho_null))
    if mismatch > agreement:
        raise NumericalError("null-space and propagated steady states disagree",
                             {'mismatch': mismatch, 'agreement': agreement})
    return SteadyState(rho=rho_null, degenerate=False, null_dimension=1, relaxation_time=t, mismatch=mismatch)


def window_history(tables: CorrelationTables, sysops: SystemOperators, stride: float = 0.02) -> Dict[str, Dict]:
    """
    Psi_b = sum_j int_{-T_mem}^0 C_bj(0, s) A_j(s) ds and Theta_b with C_jb(s, 0),
    on the same window and quadrature as the steady-state term of irrelevant_terms
    """
    zero = np.zeros((2, 2), dtype=complex)
    hs = _history_window(tables, stride)
    if len(hs) < 2 or hs[0] == 0:
        return {key: {a: zero for a in GREEK} for key in ('psi', 'theta')}
    A_h = sysops.A_at(hs)
    ev_bj, ev_jb = tables.evaluator((0.0, hs)), tables.evaluator((hs, 0.0))
    psi = {a: sum(trapezoid(ev_bj((a, j))[:, None, None] * A_h[j], hs, axis=0) for j in LATIN) for a in GREEK}
    theta = {a: sum(trapezoid(ev_jb((j, a))[:, None, None] * A_h[j], hs, axis=0) for j in LATIN) for a in GREEK}
    return {'psi': psi, 'theta': theta}


def qrt_initial_relevant(rho_ss: np.ndarray, tables: CorrelationTables, sysops: SystemOperators,
                         stride: float = 0.02) -> np.ndarray:
    """Seed sum_b s_b [<B> rho_ss - i (Psi_b rho_ss - rho_ss Theta_b)] with window history integrals"""
    hist = window_history(tables, sysops, stride)
    b = tables.B_avg
    seed = np.zeros((2, 2), dtype=complex)
    for beta in GREEK:
        dressed = b * rho_ss - 1j * (hist['psi'][beta] @ rho_ss - rho_ss @ hist['theta'][beta])
        seed += sysops.s[beta] @ dressed
    return seed


def _history_window(tables: CorrelationTables, stride: float) -> np.ndarray:
    """Pre-measurement times s in [-T_mem, 0]"""
    return -history_grid(tables.memory_horizon, stride)[::-1]


def _qp_drive(tau: float, beta, rho_ss: np.ndarray, tables: CorrelationTables,
              sysops: SystemOperators, stride: float) -> np.ndarray:
    """Drive from the bath deviation (B_b - <B>) tau_R created by the measurement"""
    X = sysops.s[beta] @ rho_ss
    A_t = sysops.A_at(tau)
    out = np.zeros((2, 2), dtype=complex)
    for i in LATIN:
        gamma = complex(tables.correlation(i, beta, tau, 0.0))
        if gamma != 0:
            out += -1j * gamma * commutator(A_t[i], X)
    if tau <= 0:
        return out
    s = history_grid(tau, stride)
    A_s = sysops.A_at(s)
    b = tables.B_avg
    ev3, ev2 = tables.evaluator((tau, s, 0.0)), tables.evaluator((tau, s))
    ev3r, ev2r = tables.evaluator((s, tau, 0.0)), tables.evaluator((s, tau))
    for i in LATIN:
        left = np.zeros((2, 2), dtype=complex)
        right = np.zeros((2, 2), dtype=complex)
        for j in LATIN:
            k_left = ev3((i, j, beta)) - b * ev2((i, j))
            k_right = ev3r((j, i, beta)) - b * ev2r((j, i))
            if np.any(k_left):
                left += trapezoid(k_left[:, None, None] * A_s[j], s, axis=0)
            if np.any(k_right):
                right += trapezoid(k_right[:, None, None] * A_s[j], s, axis=0)
        out -= commutator(A_t[i], left @ X) + commutator(X @ right, A_t[i])
    return out


def _qq_drive(tau: float, beta, rho_ss: np.ndarray, tables: CorrelationTables,
              sysops: SystemOperators, stride: float) -> np.ndarray:
    """Drive from the steady-state correlations acted on by the measurement (connected part)"""
    s = _history_window(tables, stride)
    if len(s) < 2 or s[0] == 0:
        return np.zeros((2, 2), dtype=complex)
    A_t = sysops.A_at(tau)
    A_s = sysops.A_at(s)
    s_b = sysops.s[beta]
    b = tables.B_avg
    ev3, ev2 = tables.evaluator((tau, 0.0, s)), tables.evaluator((tau, s))
    ev3r, ev2r = tables.evaluator((s, tau, 0.0)), tables.evaluator((s, tau))
    out = np.zeros((2, 2), dtype=complex)
    for i in LATIN:
        first = np.zeros((2, 2), dtype=complex)
        second = np.zeros((2, 2), dtype=complex)
        for j in LATIN:
            k_first = ev3((i, beta, j)) - b * ev2((i, j))
            k_second = ev3r((j, i, beta)) - b * ev2r((j, i))
            if np.any(k_first):
                first += trapezoid(k_first[:, None, None] * A_s[j], s, axis=0)
            if np.any(k_second):
                second += trapezoid(k_second[:, None, None] * A_s[j], s, axis=0)
        out -= commutator(A_t[i], s_b @ first @ rho_ss) - commutator(A_t[i], s_b @ rho_ss @ second)
    return out


def qrt_inhomogeneous_kernel(tau: float, rho_ss: np.ndarray, tables: CorrelationTables,
                             sysops: SystemOperators, stride: float = 0.02,
                             parts: bool = False):
    """
    Interaction-picture drive of the regression equation, summed over the
    measurement index.  With parts=True returns {'qp': ..., 'qq': ...}.
    """
    if tau < 0:
        raise DomainError("tau must be >= 0")
    zero = np.zeros((2, 2), dtype=complex)
    if tau > drive_horizon(tables):
        return {'qp': zero, 'qq': zero} if parts else zero
    qp = sum(_qp_drive(tau, beta, rho_ss, tables, sysops, stride) for beta in GREEK)
    qq = sum(_qq_drive(tau, beta, rho_ss, tables, sysops, stride) for beta in GREEK)
    if parts:
        return {'qp': qp, 'qq': qq}
    return qp + qq


def _propagate(L: np.ndarray, X0: np.ndarray, tau_grid: np.ndarray,
               drive: Optional[Callable[[float], np.ndarray]] = None) -> np.ndarray:
    """
    Exponential integrator for dX/dtau = L X + D(tau) on a uniform grid:
    X_{n+1} = e^{Lh} X_n + h/6 [e^{Lh} D_n + 4 e^{Lh/2} D_{n+1/2} + D_{n+1}].
    """
    h = float(tau_grid[1] - tau_grid[0]) if len(tau_grid) > 1 else 0.0
    full, half = expm(L * h), expm(L * 0.5 * h)
    y = vec(X0)
    out = np.empty((len(tau_grid), 2, 2), dtype=complex)
    out[0] = X0
    for n in range(1, len(tau_grid)):
        y_next = full @ y
        if drive is not None:
            t0 = tau_grid[n - 1]
            d0, dm, d1 = drive(t0), drive(t0 + 0.5 * h), drive(t0 + h)
            y_next = y_next + (h / 6.0) * (full @ d0 + 4.0 * (half @ dm) + d1)
        y = y_next
        out[n] = unvec(y)
    return out


def _check_grid(tau_grid: Sequence[float]) -> np.ndarray:
    tau_grid = np.asarray(tau_grid, dtype=float)
    if tau_grid.ndim != 1 or len(tau_grid) < 2 or tau_grid[0] != 0:
        raise DomainError("tau_grid must be a uniform grid starting at 0")
    steps = np.diff(tau_grid)
    if np.max(np.abs(steps - steps[0])) > 1e-9 * max(1.0, steps[0]):
        raise DomainError("tau_grid must be uniform")
    return tau_grid


def uncorrected_response(tau_grid: np.ndarray, rho_ss: np.ndarray, tables: CorrelationTables,
                         sysops: SystemOperators) -> np.ndarray:
    """G(tau) = sum_ab C_ab(tau) tr[s_a exp(L tau)(s_b rho_ss)]"""
    L = saturated_generator(tables, sysops)
    G = np.zeros(len(tau_grid), dtype=complex)
    for beta in GREEK:
        evolved = _propagate(L, sysops.s[beta] @ rho_ss, tau_grid)
        for alpha in GREEK:
            c_ab = tables.correlation(alpha, beta, tau_grid, 0.0)
            G += c_ab * np.einsum('ij,nji->n', sysops.s[alpha], evolved)
    return G


@log_run
def response_function(tau_grid: Sequence[float], mode: ObservableMode, tables: CorrelationTables,
                      sysops: SystemOperators, rho_ss: Optional[np.ndarray] = None,
                      include_inhomogeneous: bool = True, stride: float = 0.02) -> ResponseRecord:
    """
    S1 for either mode.  The stored S1 is the complex two-time product; the
    response is its imaginary part.
    """
    mode = ObservableMode(mode)
    tau_grid = _check_grid(tau_grid)
    metadata: Dict[str, Any] = {
        'mode': mode.value,
        'memory_horizon': tables.memory_horizon,
        't_table': tables.t_table,
        'fourth_order_correction': 'omitted',
    }
    if rho_ss is None:
        ss = steady_state(tables, sysops)
        rho_ss = ss.rho
        metadata['steady_state'] = ss.to_dict()
    rho_ss = np.asarray(rho_ss, dtype=complex)
    metadata['steady_state_hermiticity_defect'] = hermiticity_defect(rho_ss)

    if mode is ObservableMode.UNCORRECTED:
        G = uncorrected_response(tau_grid, rho_ss, tables, sysops)
        return ResponseRecord(tau_grid=tau_grid, S1=G, mode=mode, metadata=metadata)

    L = saturated_generator(tables, sysops)
    seed = qrt_initial_relevant(rho_ss, tables, sysops, stride)
    horizon = drive_horizon(tables)
    drive_cache: Dict[int, np.ndarray] = {}

    def drive(tau: float) -> np.ndarray:
        if tau > horizon:
            return np.zeros(4, dtype=complex)
        key = int(round(tau * 1e6))
        if key not in drive_cache:
            d_int = qrt_inhomogeneous_kernel(tau, rho_ss, tables, sysops, stride)
            drive_cache[key] = vec(interaction_picture_op(d_int, -tau, sysops.delta_r))
        return drive_cache[key]

    evolved = _propagate(L, seed, tau_grid, drive if include_inhomogeneous else None)

    b = tables.B_avg
    relevant = b * np.einsum('ij,nji->n', SIGMA_X, evolved)
    terms = {name: np.zeros(len(tau_grid), dtype=complex) for name in ('history', 'measurement', 'initial', 'steady')}

    for n, tau in enumerate(tau_grid):
        ops = psi_theta(float(tau), tables, sysops)
        X = evolved[n]
        for a in GREEK:
            terms['history'][n] += -1j * np.trace(sysops.s[a] @ (ops['psi'][a] @ X - X @ ops['theta'][a]))

    if include_inhomogeneous:
        active = tau_grid <= horizon
        for n in np.nonzero(active)[0]:
            tau = float(tau_grid[n])
            contributions = irrelevant_terms(tau, rho_ss, tables, sysops, stride)
            terms['measurement'][n] = contributions['measurement']
            terms['initial'][n] = contributions['initial']
            terms['steady'][n] = contributions['steady']

    S1 = relevant + sum(terms.values())
    metadata['term_magnitudes'] = {name: float(np.max(np.abs(v))) for name, v in terms.items()}
    metadata['relevant_magnitude'] = float(np.max(np.abs(relevant)))
    metadata['include_inhomogeneous'] = include_inhomogeneous
    return ResponseRecord(tau_grid=tau_grid, S1=S1, mode=mode, metadata=metadata)


def irrelevant_terms(tau: float, rho_ss: np.ndarray, tables: CorrelationTables,
                     sysops: SystemOperators, stride: float = 0.02) -> Dict[str, complex]:
    """
    Correlated contributions at read-out time tau that are driven by the
    measurement and by the steady-state correlations:
      measurement: sum_ab (C_ab(tau) - <B>^2) tr[s_a(tau) s_b rho_ss]
      initial:     -i sum_ab tr[s_a(tau) (Psi^I_ab X_b - X_b Theta^I_ab)],  X_b = s_b rho_ss
      steady:      -i sum_abj int ds {(C_abj - <B> C_bj) tr[s_a(tau) s_b A_j(s) rho_ss]
                                      - (C_jab - <B> C_jb) tr[s_a(tau) s_b rho_ss A_j(s)]}
    """
    b = tables.B_avg
    s_tau = sysops.s_at(tau)
    out = {'measurement': 0j, 'initial': 0j, 'steady': 0j}

    for alpha in GREEK:
        for beta in GREEK:
            c_ab = complex(tables.correlation(alpha, beta, tau, 0.0))
            out['measurement'] += (c_ab - b * b) * np.trace(s_tau[alpha] @ sysops.s[beta] @ rho_ss)

    if tau > 0:
        s = history_grid(tau, stride)
        A_s = sysops.A_at(s)
        ev3, ev2 = tables.evaluator((tau, s, 0.0)), tables.evaluator((tau, s))
        ev3r, ev2r = tables.evaluator((s, tau, 0.0)), tables.evaluator((s, tau))
        ev_jb = tables.evaluator((s, 0.0))
        for beta in GREEK:
            X = sysops.s[beta] @ rho_ss
            c_jb = {j: ev_jb((j, beta)) for j in LATIN}
            for alpha in GREEK:
                psi = sum(trapezoid((ev3((alpha, j, beta)) - b * ev2((alpha, j)) - b * c_jb[j])[:, None, None] * A_s[j], s, axis=0)
                          for j in LATIN)
                theta = sum(trapezoid((ev3r((j, alpha, beta)) - b * ev2r((j, alpha)) - b * c_jb[j])[:, None, None] * A_s[j], s, axis=0)
                            for j in LATIN)
                out['initial'] += -1j * np.trace(s_tau[alpha] @ (psi @ X - X @ theta))

    hs = _history_window(tables, stride)
    if len(hs) >= 2 and hs[0] < 0:
        A_h = sysops.A_at(hs)
        ev_abj = tables.evaluator((tau, 0.0, hs))
        ev_jab = tables.evaluator((hs, tau, 0.0))
        ev_bj = tables.evaluator((0.0, hs))
        ev_jb = tables.evaluator((hs, 0.0))
        for alpha in GREEK:
            for beta in GREEK:
                left_op = s_tau[alpha] @ sysops.s[beta]
                for j in LATIN:
                    k_left = ev_abj((alpha, beta, j)) - b * ev_bj((beta, j))
                    k_right = ev_jab((j, alpha, beta)) - b * ev_jb((j, beta))
                    tr_left = np.einsum('ij,njk,ki->n', left_op, A_h[j], rho_ss)
                    tr_right = np.einsum('ij,jk,nki->n', left_op, rho_ss, A_h[j])
                    out['steady'] += -1j * trapezoid(k_left * tr_left - k_right * tr_right, hs)
    return out


def _window(name: str, tau: np.ndarray, decay_target: float, sigma: Optional[float]):
    span = tau[-1] if tau[-1] > 0 else 1.0
    if name == 'exponential':
        rate = -np.log(decay_target) / span
        return np.exp(-rate * tau), {'window': 'exponential', 'rate': float(rate)}
    if name == 'gaussian':
        width = sigma or span / 3.0
        return np.exp(-0.5 * (tau / width) ** 2), {'window': 'gaussian', 'sigma': float(width)}
    return np.ones_like(tau), {'window': 'none'}


def spectrum(record: ResponseRecord, window: str = 'none', omega_grid: Optional[np.ndarray] = None,
             decay_target: float = 1e-3, sigma: Optional[float] = None, chunk: int = 256) -> ResponseRecord:
    """A(omega) = 2 Re int_0^tau_max e^{i omega tau} S1(tau) dtau with optional apodization"""
    if window not in WINDOWS:
        raise DomainError(f"window must be one of {WINDOWS}")
    tau = np.asarray(record.tau_grid, dtype=float)
    s1 = record.response
    peak = float(np.max(np.abs(s1))) if len(s1) else 0.0
    tail = float(abs(s1[-1]))
    truncated = peak > 0 and tail > TRUNCATION_RATIO * peak
    if window == 'auto':
        window = 'exponential' if truncated else 'none'
    if truncated and window == 'none':
        log_numerical_event('response_truncated', {
            'tau_max': float(tau[-1]), 'tail_ratio': tail / peak, 'estimated_leakage': 2.0 * tail / peak,
        })
    weights, window_info = _window(window, tau, decay_target, sigma)

    if omega_grid is None:
        omega_grid = np.linspace(-2.0, 20.0, 2201)
    omega_grid = np.asarray(omega_grid, dtype=float)
    signal = s1 * weights
    quad = np.full(len(tau), tau[1] - tau[0])
    quad[0] *= 0.5
    quad[-1] *= 0.5
    transform = np.empty(len(omega_grid), dtype=complex)
    for start in range(0, len(omega_grid), chunk):
        w = omega_grid[start:start + chunk]
        transform[start:start + chunk] = np.exp(1j * np.outer(w, tau)) @ (quad * signal)
    assembled = transform + np.conj(transform)
    imag_residual = float(np.max(np.abs(assembled.imag))) if len(assembled) else 0.0

    metadata = dict(record.metadata)
    metadata.update(window_info)
    metadata['truncated'] = bool(truncated)
    metadata['tail_ratio'] = tail / peak if peak > 0 else 0.0
    metadata['spectrum_imag_residual'] = imag_residual
    return ResponseRecord(tau_grid=tau, S1=record.S1, mode=record.mode, omega_grid=omega_grid,
                          A=np.real(assembled), metadata=metadata)
