# polaron_qrt/observables.py
# Lab-frame expectation values from polaron-frame reduced states.
#
# sigma_x in the lab frame becomes sum_alpha s_alpha B_alpha in the polaron frame
# (s_+ = sigma with B_+, s_- = sigma^dag with B_-).  The factorized part gives
# <B> tr(sigma_x rho_S); the correlated part contributes
#     -i sum_alpha tr(s_alpha [Psi_alpha(t) rho_S - rho_S Theta_alpha(t)])
# with Psi_alpha(t) = sum_j int_0^t C_alpha,j(u) A_j(-u) du and
#      Theta_alpha(t) = sum_j int_0^t C_j,alpha(-u) A_j(-u) du,
# plus, for a lab-frame thermal initial bath, the terms driven by the
# initial correlations.

import logging
from typing import Dict, Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from polaron_qrt.bath import CorrelationTables
from polaron_qrt.logging_config import log_numerical_event
from polaron_qrt.models import (
    ConfigurationError, DensityTrajectory, GREEK, LATIN, ObservableMode,
)
from polaron_qrt.system import SIGMA_X, SIGMA_Z, SystemOperators, interaction_picture_op
from polaron_qrt.tcl2 import drive_horizon, history_grid, interpolate_table

# Configure logger for this module
logger = logging.getLogger(__name__)

REALITY_TOLERANCE = 1e-8


def sigma_z_expectation(traj: DensityTrajectory) -> np.ndarray:
    states = traj.schrodinger_states()
    return np.real(np.einsum('ij,nji->n', SIGMA_Z, states))


def history_operators(tables: CorrelationTables, sysops: SystemOperators) -> Dict[str, Dict]:
    """Cumulative Psi_alpha(t), Theta_alpha(t) tables on the kernel grid, shape (n, 2, 2)"""
    def build():
        u = tables.tau_grid
        forward = tables.evaluator((u, 0.0))
        backward = tables.evaluator((-u, 0.0))
        A_lag = {j: interaction_picture_op(sysops.A[j], -u, sysops.delta_r) for j in LATIN}
        psi, theta = {}, {}
        for a in GREEK:
            psi_integrand = sum(forward((a, j))[:, None, None] * A_lag[j] for j in LATIN)
            theta_integrand = sum(backward((j, a))[:, None, None] * A_lag[j] for j in LATIN)
            psi[a] = cumulative_trapezoid(psi_integrand, dx=tables.dtau, axis=0, initial=0)
            theta[a] = cumulative_trapezoid(theta_integrand, dx=tables.dtau, axis=0, initial=0)
        return {'psi': psi, 'theta': theta}
    return tables.cached(('history', sysops.delta, sysops.delta_r), build)


def psi_theta(t: float, tables: CorrelationTables, sysops: SystemOperators,
              window: str = 'saturate') -> Dict[str, Dict]:
    hist = history_operators(tables, sysops)
    return {
        key: {a: interpolate_table(hist[key][a], t, tables.dtau, tables.t_table, window, name=key) for a in GREEK}
        for key in ('psi', 'theta')
    }


def inhomogeneous_history(t: float, tables: CorrelationTables, sysops: SystemOperators,
                          stride: float = 0.02) -> Dict[str, Dict]:
    """
    Psi^I_alpha(t) = sum_j int_0^t [C^I_alpha,j(t, s) - <B> Gamma_j(s)] A_j(s) ds
    Theta^I_alpha(t) = sum_j int_0^t [C^I_j,alpha(s, t) - <B> Gamma_j(s)] A_j(s) ds
    """
    zero = np.zeros((2, 2), dtype=complex)
    if t <= 0 or t > drive_horizon(tables):
        return {'psi': {a: zero for a in GREEK}, 'theta': {a: zero for a in GREEK}}
    s = history_grid(t, stride)
    A_s = sysops.A_at(s)
    gammas = {j: tables.gamma(j, s) for j in LATIN}
    ts_disp, ts_th = tables.evaluator((t, s), displaced=True), tables.evaluator((t, s))
    st_disp, st_th = tables.evaluator((s, t), displaced=True), tables.evaluator((s, t))
    b = tables.B_avg
    psi, theta = {}, {}
    for a in GREEK:
        psi_int = sum((ts_disp((a, j)) - ts_th((a, j)) - b * gammas[j])[:, None, None] * A_s[j] for j in LATIN)
        theta_int = sum((st_disp((j, a)) - st_th((j, a)) - b * gammas[j])[:, None, None] * A_s[j] for j in LATIN)
        psi[a] = trapezoid(psi_int, s, axis=0)
        theta[a] = trapezoid(theta_int, s, axis=0)
    return {'psi': psi, 'theta': theta}


def sigma_x_components(traj: DensityTrajectory, tables: Optional[CorrelationTables],
                       include_inhomogeneous: Optional[bool] = None,
                       stride: float = 0.02) -> Dict[str, np.ndarray]:
    """
    Separate contributions to the lab-frame <sigma_x(t)>: the factorized part,
    the correlated history part and the initial-correlation part (complex,
    before the final real cast).
    """
    if tables is None:
        raise ConfigurationError("sigma_x corrections require correlation tables for the +/- kernel row")
    if include_inhomogeneous is None:
        include_inhomogeneous = traj.inhomogeneous
    sysops = SystemOperators(tables.delta, traj.delta_r)
    states = traj.schrodinger_states()
    b = tables.B_avg
    n = len(traj.times)
    relevant = b * np.einsum('ij,nji->n', SIGMA_X, states)
    history = np.zeros(n, dtype=complex)
    initial = np.zeros(n, dtype=complex)

    for k, t in enumerate(traj.times):
        rho = states[k]
        ops = psi_theta(float(t), tables, sysops)
        for a in GREEK:
            s_a = sysops.s[a]
            history[k] += -1j * np.trace(s_a @ (ops['psi'][a] @ rho - rho @ ops['theta'][a]))

        if include_inhomogeneous and 0 < t <= drive_horizon(tables):
            rho0 = traj.rho0
            inh = inhomogeneous_history(float(t), tables, sysops, stride)
            s_t = sysops.s_at(float(t))
            for a in GREEK:
                gamma_a = complex(tables.gamma(a, float(t)))
                initial[k] += gamma_a * np.trace(s_t[a] @ rho0)
                initial[k] += -1j * np.trace(s_t[a] @ (inh['psi'][a] @ rho0 - rho0 @ inh['theta'][a]))

    return {'relevant': relevant, 'history': history, 'initial': initial}


def sigma_x_expectation_lab(traj: DensityTrajectory, tables: Optional[CorrelationTables],
                            mode: ObservableMode = ObservableMode.CORRECTED,
                            include_inhomogeneous: Optional[bool] = None,
                            stride: float = 0.02) -> np.ndarray:
    mode = ObservableMode(mode)
    if mode is ObservableMode.UNCORRECTED:
        b = tables.B_avg if tables is not None else 1.0
        states = traj.schrodinger_states()
        return np.real(b * np.einsum('ij,nji->n', SIGMA_X, states))

    parts = sigma_x_components(traj, tables, include_inhomogeneous, stride)
    total = parts['relevant'] + parts['history'] + parts['initial']
    residual = float(np.max(np.abs(total.imag))) if len(total) else 0.0
    if residual > REALITY_TOLERANCE:
        log_numerical_event('sigma_x_imaginary_residual', {'max_abs_imag': residual})
    return np.real(total)
