# polaron_qrt/tcl2.py
# Second-order time-convolutionless master equation with inhomogeneous drive.
#
# Schroedinger-picture memory generator
#     K_S(t) rho = -sum_ij int_0^t du { C_ij(u) [A_i, A_j(-u) rho] + C_ji(-u) [rho A_j(-u), A_i] }
# is tabulated as a cumulative trapezoid integral on the kernel grid.  The
# interaction-picture generator is R_t K_S(t) R_t^-1 with R_t X = U X U^dag,
# U = exp(i H_S t).  Propagation is fixed-step RK4 on vec(rho~).

import logging
from typing import Dict, Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from polaron_qrt.bath import CorrelationTables
from polaron_qrt.logging_config import log_numerical_event, log_run
from polaron_qrt.models import (
    ConfigurationError, DensityTrajectory, DomainError, ExtrapolationError, LATIN,
    NumericalError, PropagationOptions,
)
from polaron_qrt.system import (
    SystemOperators, check_density_operator, commutator, dagger, hermiticity_defect,
    interaction_picture_op, rotation_superop, spost, spre, sprepost, unvec, vec,
)

# Configure logger for this module
logger = logging.getLogger(__name__)


def memory_integrand(u: np.ndarray, tables: CorrelationTables, sysops: SystemOperators) -> np.ndarray:
    """Superoperator integrand of K_S at lags u, shape (len(u), 4, 4)"""
    u = np.asarray(u, dtype=float)
    forward = tables.evaluator((u, 0.0))
    backward = tables.evaluator((-u, 0.0))
    A_lag = {j: interaction_picture_op(sysops.A[j], -u, sysops.delta_r) for j in LATIN}
    out = np.zeros(u.shape + (4, 4), dtype=complex)
    for i in LATIN:
        A_i = np.broadcast_to(sysops.A[i], u.shape + (2, 2))
        for j in LATIN:
            c_ij = forward((i, j))
            c_ji = backward((j, i))
            if not (np.any(c_ij) or np.any(c_ji)):
                continue
            Aj = A_lag[j]
            first = spre(A_i @ Aj) - sprepost(Aj, A_i)
            second = spost(Aj @ A_i) - sprepost(A_i, Aj)
            out -= c_ij[..., None, None] * first + c_ji[..., None, None] * second
    return out


def _memory_table(tables: CorrelationTables, sysops: SystemOperators) -> np.ndarray:
    def build():
        logger.debug(f"Building memory generator table on {len(tables.tau_grid)} lags")
        integrand = memory_integrand(tables.tau_grid, tables, sysops)
        return cumulative_trapezoid(integrand, dx=tables.dtau, axis=0, initial=0)
    return tables.cached(('memory', sysops.delta, sysops.delta_r), build)


def interpolate_table(table: np.ndarray, t: float, dtau: float, t_table: float,
                      window: str = 'strict', name: str = 'memory') -> np.ndarray:
    """Linear interpolation of a cumulative table, frozen (or refused) beyond t_table"""
    if t < 0:
        raise DomainError("time must be >= 0")
    if t > t_table + 1e-12:
        if window == 'strict':
            raise ExtrapolationError(f"t = {t:.4g} beyond table range {t_table:.4g}", {'table': name})
        return table[-1]
    x = t / dtau
    k = int(np.floor(x + 1e-9))
    frac = x - k
    if k >= len(table) - 1:
        return table[-1]
    if frac < 1e-9:
        return table[k]
    return (1.0 - frac) * table[k] + frac * table[k + 1]


def memory_generator(t: float, tables: CorrelationTables, sysops: SystemOperators,
                     window: str = 'strict') -> np.ndarray:
    """K_S(t) as a 4x4 superoperator acting on column-stacked operators"""
    return interpolate_table(_memory_table(tables, sysops), t, tables.dtau, tables.t_table, window)


def saturated_generator(tables: CorrelationTables, sysops: SystemOperators) -> np.ndarray:
    """Schroedinger-picture L_inf = -i[H_S, .] + K_S(T_table)"""
    return sysops.liouvillian() + _memory_table(tables, sysops)[-1]


def interaction_generator(t: float, tables: CorrelationTables, sysops: SystemOperators,
                          window: str = 'strict') -> np.ndarray:
    R = rotation_superop(t, sysops.delta_r)
    R_inv = rotation_superop(-t, sysops.delta_r)
    return R @ memory_generator(t, tables, sysops, window) @ R_inv


def drive_horizon(tables: CorrelationTables) -> float:
    """Beyond this time every Gamma_i(t) and C^I(t, s) has decayed"""
    return 2.0 * tables.memory_horizon


MAX_HISTORY_NODES = 2001


def history_grid(t: float, stride: float, max_nodes: int = MAX_HISTORY_NODES) -> np.ndarray:
    n = min(max(2, int(np.ceil(t / stride - 1e-9)) + 1), max_nodes)
    return np.linspace(0.0, t, n)


def inhomogeneous_drive(t: float, rho0: np.ndarray, tables: Optional[CorrelationTables],
                        sysops: SystemOperators, stride: float = 0.02) -> np.ndarray:
    """
    Interaction-picture drive
        -i sum_i Gamma_i(t) [A_i(t), rho0] - (X + X^dag),
        X = sum_i [A_i(t), M_i rho0],  M_i = sum_j int_0^t C^I_ij(t, s) A_j(s) ds
    from the bath deviation B_- tau_R B_+ - tau_R of a lab-frame thermal bath.
    """
    if tables is None:
        raise ConfigurationError("inhomogeneous drive requires correlation tables")
    rho0 = np.asarray(rho0, dtype=complex)
    if t < 0:
        raise DomainError("time must be >= 0")
    if t > drive_horizon(tables):
        return np.zeros((2, 2), dtype=complex)

    A_t = sysops.A_at(t)
    out = np.zeros((2, 2), dtype=complex)
    for i in LATIN:
        gamma = complex(tables.gamma(i, t))
        if gamma != 0:
            out += -1j * gamma.real * commutator(A_t[i], rho0)

    if t > 0:
        s = history_grid(t, stride)
        A_s = sysops.A_at(s)
        displaced = tables.evaluator((t, s), displaced=True)
        thermal = tables.evaluator((t, s))
        X = np.zeros((2, 2), dtype=complex)
        for i in LATIN:
            M = np.zeros((2, 2), dtype=complex)
            for j in LATIN:
                kernel = displaced((i, j)) - thermal((i, j))
                if np.any(kernel):
                    M += trapezoid(kernel[:, None, None] * A_s[j], s, axis=0)
            X += commutator(A_t[i], M @ rho0)
        out -= X + dagger(X)
    return out


class TCL2Propagator:
    """
    RK4 integration of d rho~/dt = K~(t) rho~ + I~(t) in the interaction picture.

    Stage times t + dt/2 fall on the kernel grid when dt is an even multiple
    of the table step; drive values are cached per grid time.
    """

    def __init__(self, tables: CorrelationTables, sysops: SystemOperators, opts: PropagationOptions):
        self.tables = tables
        self.sysops = sysops
        self.opts = opts
        self._drive_cache: Dict[int, np.ndarray] = {}
        self._rho0: Optional[np.ndarray] = None
        ratio = 0.5 * opts.dt / tables.dtau
        if abs(ratio - round(ratio)) > 1e-9:
            logger.warning(f"dt={opts.dt} is not an even multiple of the kernel step {tables.dtau}; stage times are interpolated")

    def generator(self, t: float) -> np.ndarray:
        return interaction_generator(t, self.tables, self.sysops, self.opts.kernel_window)

    def drive(self, t: float) -> np.ndarray:
        key = int(round(t / (0.5 * self.tables.dtau)))
        if key not in self._drive_cache:
            self._drive_cache[key] = vec(inhomogeneous_drive(t, self._rho0, self.tables, self.sysops,
                                                             self.opts.history_stride))
        return self._drive_cache[key]

    def rhs(self, t: float, y: np.ndarray) -> np.ndarray:
        dy = self.generator(t) @ y
        if self.opts.drive_enabled:
            dy = dy + self.drive(t)
        return dy

    @log_run
    def run(self, rho0: np.ndarray) -> DensityTrajectory:
        rho0 = np.asarray(rho0, dtype=complex)
        if not check_density_operator(rho0):
            raise DomainError("rho0 must be a valid density operator")
        self._rho0 = rho0
        self._drive_cache.clear()
        opts = self.opts
        dt, n_steps = opts.dt, opts.n_steps
        if opts.kernel_window == 'strict' and n_steps * dt > self.tables.t_table + 1e-12:
            raise ExtrapolationError(f"t_final {opts.t_final} beyond table range {self.tables.t_table}",
                                     {'t_table': self.tables.t_table})

        y = vec(rho0)
        times, states = [0.0], [rho0.copy()]
        min_eigs, trace_defects, herm_defects = [float(np.linalg.eigvalsh(rho0).min())], [0.0], [0.0]
        warned_positivity = False

        for n in range(n_steps):
            t = n * dt
            k1 = self.rhs(t, y)
            k2 = self.rhs(t + 0.5 * dt, y + 0.5 * dt * k1)
            k3 = self.rhs(t + 0.5 * dt, y + 0.5 * dt * k2)
            k4 = self.rhs(t + dt, y + dt * k3)
            y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

            rho = unvec(y)
            trace_defect = abs(np.trace(rho) - 1.0)
            herm = hermiticity_defect(rho)
            if not np.isfinite(y).all() or trace_defect > opts.invariant_tolerance or herm > opts.invariant_tolerance:
                raise NumericalError(f"density operator invariants violated at t={t + dt:.4g}", {
                    't': t + dt, 'trace_defect': float(trace_defect), 'hermiticity_defect': herm,
                })
            if (n + 1) % opts.store_every == 0:
                min_eig = float(np.linalg.eigvalsh(0.5 * (rho + dagger(rho))).min())
                if min_eig < -1e-9 and not warned_positivity:
                    log_numerical_event('positivity_violation', {'t': t + dt, 'min_eigenvalue': min_eig})
                    warned_positivity = True
                times.append((n + 1) * dt)
                states.append(rho)
                min_eigs.append(min_eig)
                trace_defects.append(float(trace_defect))
                herm_defects.append(herm)

        return DensityTrajectory(
            times=np.asarray(times), states=np.asarray(states), delta_r=self.sysops.delta_r,
            frame=opts.frame, inhomogeneous=opts.drive_enabled, rho0=rho0,
            min_eigenvalues=np.asarray(min_eigs), trace_defects=np.asarray(trace_defects),
            hermiticity_defects=np.asarray(herm_defects),
        )


def propagate(rho0: np.ndarray, opts: PropagationOptions, tables: CorrelationTables,
              sysops: SystemOperators) -> DensityTrajectory:
    return TCL2Propagator(tables, sysops, opts).run(rho0)
