# polaron_qrt/variational.py
# Self-consistent variational polaron parameters F(nu), <B> and Delta_R

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from polaron_qrt.bath import CorrelationTables, FrequencyGrid, build_frequency_grid, coth, spectral_density
from polaron_qrt.logging_config import log_numerical_event
from polaron_qrt.models import ConvergenceError, DomainError, Frame, SpectralDensityParams

# Configure logger for this module
logger = logging.getLogger(__name__)

# <B> within this many tolerances of zero counts as the collapsed branch
LOCALIZED_TOLERANCES = 10.0
# F(nu_min) above this marks an infrared-divergent Franck-Condon exponent
DIVERGENCE_F_TOL = 1e-6


def variational_response(nu, delta_r: float, beta: float):
    """F(nu) = [1 + (2 Delta_R/nu) tanh(beta Delta_R/2) coth(beta nu/2)]^-1"""
    nu_arr = np.asarray(nu, dtype=float)
    if np.any(nu_arr <= 0):
        raise DomainError("variational response requires nu > 0")
    if delta_r < 0:
        raise DomainError("Delta_R must be >= 0")
    if delta_r == 0:
        F = np.ones_like(nu_arr)
    else:
        F = 1.0 / (1.0 + (2.0 * delta_r / nu_arr) * np.tanh(0.5 * beta * delta_r) * coth(0.5 * beta * nu_arr))
    return float(F) if np.ndim(nu) == 0 else F


def franck_condon(F_grid, p: SpectralDensityParams, grid: Optional[FrequencyGrid] = None) -> float:
    """
    <B> = exp[-2 int J F^2 coth(beta nu/2) / nu^2]

    Returns 0 when the exponent diverges: for s <= 2 the integrand only stays
    integrable at nu -> 0 if F vanishes there.
    """
    grid = grid or build_frequency_grid(p)
    F = np.broadcast_to(np.asarray(F_grid, dtype=float), grid.nodes.shape)
    if p.alpha == 0 or not np.any(F):
        return 1.0
    if p.s <= 2 and F[0] > DIVERGENCE_F_TOL:
        return 0.0
    nu = grid.nodes
    exponent = 2.0 * grid.integrate(spectral_density(nu, p) * F ** 2 * coth(0.5 * p.beta * nu) / nu ** 2)
    if not np.isfinite(exponent):
        return 0.0
    return float(np.exp(-exponent))


def free_energy_gap(vsol: 'VariationalSolution') -> float:
    """
    A(delocalized) - A(localized) of the variational free-energy bound.

    The bound -ln(2 cosh(beta Delta_R/2))/beta + 1/2 int J (F^2 - 2F)/nu is
    stationary at variational_response; subtracting its F = 1, Delta_R = 0
    value leaves a finite difference even where the localized exponent
    diverges.  Positive means the collapsed branch is the lower one.
    """
    p = vsol.params
    if vsol.localized:
        return 0.0
    x = 0.5 * p.beta * vsol.Delta_R
    log_cosh = float(np.logaddexp(x, -x) - np.log(2.0))
    if p.alpha == 0:
        return -log_cosh / p.beta
    nu = vsol.grid.nodes
    mixing = 0.5 * vsol.grid.integrate(spectral_density(nu, p) * (1.0 - vsol.F_grid) ** 2 / nu)
    return -log_cosh / p.beta + mixing


@dataclass
class SolverOptions:
    mixing: float = 0.5
    tolerance: float = 1e-10
    max_iterations: int = 500
    B0: float = 1.0


@dataclass
class VariationalSolution:
    """Variational parameters for one (params, Delta) point"""
    params: SpectralDensityParams
    Delta: float
    B_avg: float
    Delta_R: float
    grid: FrequencyGrid
    F_grid: np.ndarray
    frame: Frame = Frame.VARIATIONAL
    converged: bool = True
    iterations: int = 0
    localized: bool = False
    trace: List[float] = field(default_factory=list)

    def response(self, nu) -> np.ndarray:
        """F evaluated at arbitrary frequencies for the frame of this solution"""
        nu = np.asarray(nu, dtype=float)
        if self.frame is Frame.WEAK:
            return np.zeros_like(nu)
        if self.frame is Frame.FULL_POLARON or self.Delta_R == 0:
            return np.ones_like(nu)
        return variational_response(nu, self.Delta_R, self.params.beta)

    def residual(self) -> float:
        """Change of <B> on re-evaluating the Franck-Condon factor on the stored F"""
        return abs(franck_condon(self.F_grid, self.params, self.grid) - self.B_avg)

    def to_dict(self) -> Dict:
        return {
            **self.params.to_dict(),
            'Delta': self.Delta,
            'B_avg': self.B_avg,
            'Delta_R': self.Delta_R,
            'frame': self.frame.value,
            'converged': self.converged,
            'iterations': self.iterations,
            'localized': self.localized,
        }


def _is_oscillating(trace: Sequence[float], window: int = 20) -> bool:
    steps = np.diff(trace[-window:])
    if len(steps) < 4:
        return False
    sign_flips = np.sum(np.sign(steps[1:]) != np.sign(steps[:-1]))
    return sign_flips >= len(steps) - 2


def solve_self_consistent(p: SpectralDensityParams, Delta: float = 1.0,
                          opts: Optional[SolverOptions] = None,
                          grid: Optional[FrequencyGrid] = None) -> VariationalSolution:
    """
    Damped fixed-point iteration on <B>:
    Delta_R = <B> Delta, F <- F(nu; Delta_R), <B>_new <- franck_condon(F),
    <B> <- (1 - m) <B> + m <B>_new until |change| < tolerance.
    """
    opts = opts or SolverOptions()
    if Delta <= 0:
        raise DomainError("Delta must be > 0")
    grid = grid or build_frequency_grid(p)
    B = float(opts.B0)
    trace = [B]
    converged = False
    iterations = 0
    B_new = B

    for iterations in range(1, opts.max_iterations + 1):
        F = variational_response(grid.nodes, B * Delta, p.beta)
        B_new = franck_condon(F, p, grid)
        B_next = (1.0 - opts.mixing) * B + opts.mixing * B_new
        trace.append(B_next)
        if abs(B_next - B) < opts.tolerance:
            B = B_next
            converged = True
            break
        B = B_next

    if not converged:
        if _is_oscillating(trace):
            raise ConvergenceError(f"variational iteration oscillates after {iterations} iterations", trace)
        raise ConvergenceError(f"variational iteration did not converge in {iterations} iterations", trace)

    # the damped update only halves towards zero once franck_condon underflows
    localized = B_new == 0.0 or B <= LOCALIZED_TOLERANCES * opts.tolerance
    if localized:
        B = 0.0
    F = variational_response(grid.nodes, B * Delta, p.beta)
    logger.debug(f"Variational solve alpha={p.alpha:.4g} s={p.s:.3g}: <B>={B:.6g} after {iterations} iterations")
    return VariationalSolution(params=p, Delta=Delta, B_avg=B, Delta_R=B * Delta, grid=grid, F_grid=F,
                               frame=Frame.VARIATIONAL, converged=True, iterations=iterations,
                               localized=localized, trace=trace)


def fixed_frame(p: SpectralDensityParams, Delta: float, frame: Frame,
                grid: Optional[FrequencyGrid] = None) -> VariationalSolution:
    """Weak (F = 0) or full polaron (F = 1) parameters for the limit checks"""
    frame = Frame(frame)
    grid = grid or build_frequency_grid(p)
    if frame is Frame.WEAK:
        F, B = np.zeros_like(grid.nodes), 1.0
    elif frame is Frame.FULL_POLARON:
        F = np.ones_like(grid.nodes)
        B = franck_condon(F, p, grid)
    else:
        return solve_self_consistent(p, Delta, grid=grid)
    return VariationalSolution(params=p, Delta=Delta, B_avg=B, Delta_R=B * Delta, grid=grid, F_grid=F,
                               frame=frame, localized=(B == 0.0))


def solve_frame(p: SpectralDensityParams, Delta: float, frame: Frame,
                opts: Optional[SolverOptions] = None) -> VariationalSolution:
    frame = Frame(frame)
    if frame is Frame.VARIATIONAL:
        return solve_self_consistent(p, Delta, opts)
    return fixed_frame(p, Delta, frame)


def alpha_sweep(p: SpectralDensityParams, alphas: Sequence[float], Delta: float = 1.0,
                direction: str = 'up', opts: Optional[SolverOptions] = None) -> List[VariationalSolution]:
    """
    Continuation over alpha: each solve is seeded with the previous <B>.
    Solutions are returned in the order of `alphas` whatever the direction.
    """
    if direction not in ('up', 'down'):
        raise DomainError("direction must be 'up' or 'down'")
    opts = opts or SolverOptions()
    order = np.argsort(alphas)
    if direction == 'down':
        order = order[::-1]
    grid = build_frequency_grid(p)
    results: Dict[int, VariationalSolution] = {}
    seed = opts.B0
    for k in order:
        step_opts = SolverOptions(mixing=opts.mixing, tolerance=opts.tolerance,
                                  max_iterations=opts.max_iterations, B0=seed)
        sol = solve_self_consistent(p.with_alpha(float(alphas[k])), Delta, step_opts, grid)
        results[int(k)] = sol
        # a collapsed branch would pin every later seed at zero
        seed = sol.B_avg if sol.B_avg > 0 else opts.B0 if direction == 'down' else 0.0
    return [results[k] for k in range(len(alphas))]


def find_jump(alphas: Sequence[float], solutions: Sequence[VariationalSolution]) -> Optional[Tuple[float, float]]:
    """(alpha before, alpha after) bracketing the collapse of <B> to zero, if any"""
    order = np.argsort(alphas)
    for a, b in zip(order[:-1], order[1:]):
        if not solutions[a].localized and solutions[b].localized:
            return float(alphas[a]), float(alphas[b])
    return None


def find_free_energy_crossing(alphas: Sequence[float],
                              solutions: Sequence[VariationalSolution]) -> Optional[Tuple[float, float]]:
    """(alpha before, alpha after) where the delocalized branch stops being the lower free energy"""
    order = [k for k in np.argsort(alphas) if not solutions[k].localized]
    gaps = {k: free_energy_gap(solutions[k]) for k in order}
    for a, b in zip(order[:-1], order[1:]):
        if gaps[a] < 0 < gaps[b]:
            return float(alphas[a]), float(alphas[b])
    return None


def czz_weight_diagnostic(vsol: VariationalSolution, p: Optional[SpectralDensityParams] = None,
                          T_max: float = 200.0, tables=None, dtau: float = 0.05) -> float:
    """int_0^T_max |C_ZZ(tau)| dtau"""
    p = p or vsol.params
    if p.alpha == 0 or vsol.frame is Frame.FULL_POLARON or vsol.localized:
        return 0.0
    if tables is None or tables.t_table < T_max:
        tables = CorrelationTables(p, vsol, dtau=dtau, t_table=T_max)
    mask = tables.tau_grid <= T_max + 1e-12
    return float(trapezoid(np.abs(tables.series('czz')[mask]), tables.tau_grid[mask]))


def variational_scan(base: SpectralDensityParams, alphas: Sequence[float], s_values: Sequence[float],
                     Delta: float = 1.0, directions: Sequence[str] = ('up', 'down'),
                     workers: int = 1, czz_T_max: float = 200.0, czz_dtau: float = 0.05,
                     opts: Optional[SolverOptions] = None) -> Tuple[pd.DataFrame, Dict]:
    """
    Up and down alpha sweeps for each ohmicity.

    Returns a frame with columns (s, alpha, B_avg, Delta_R, localized_flag,
    czz_weight, sweep) and a summary of jump locations, free-energy
    crossings and hysteresis windows.
    """
    def run(s_val: float):
        p = SpectralDensityParams(alpha=base.alpha, nu_c=base.nu_c, s=float(s_val), beta=base.beta)
        rows, summary = [], {}
        jumps, crossings = {}, {}
        for direction in directions:
            sols = alpha_sweep(p, alphas, Delta, direction, opts)
            jumps[direction] = find_jump(alphas, sols)
            crossings[direction] = find_free_energy_crossing(alphas, sols)
            for a, sol in zip(alphas, sols):
                weight = czz_weight_diagnostic(sol, T_max=czz_T_max, dtau=czz_dtau)
                rows.append({'s': float(s_val), 'alpha': float(a), 'B_avg': sol.B_avg, 'Delta_R': sol.Delta_R,
                             'localized_flag': int(sol.localized), 'czz_weight': weight, 'sweep': direction})
        summary['jumps'] = jumps
        summary['free_energy_crossing'] = crossings
        if jumps.get('up') != jumps.get('down') and (jumps.get('up') or jumps.get('down')):
            summary['hysteresis'] = {'up': jumps.get('up'), 'down': jumps.get('down')}
            log_numerical_event('hysteresis_window', {'s': float(s_val), **summary['hysteresis']})
        return rows, summary

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        outputs = list(pool.map(run, s_values))

    rows = [row for out, _ in outputs for row in out]
    summary = {f"s={s_val:g}": info for s_val, (_, info) in zip(s_values, outputs)}
    return pd.DataFrame(rows, columns=['s', 'alpha', 'B_avg', 'Delta_R', 'localized_flag', 'czz_weight', 'sweep']), summary
