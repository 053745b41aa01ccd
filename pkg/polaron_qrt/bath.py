# polaron_qrt/bath.py
# Spectral density, tabulated bath kernels and the Gaussian correlation engine.
#
# Every bath operator in the polaron frame is either a displacement exponential
# B_+/- = exp(+/- sum_k (2 f_k/nu_k)(b_k^dag - b_k)) or the linear operator
# B_Z = sum_k (g_k - f_k)(b_k + b_k^dag).  B_X and B_Y are linear combinations:
#     B_X = (B_+ + B_- - 2<B>)/2,    B_Y = i (B_+ - B_-)/2.
# Ordered thermal expectations of such products follow from the Gaussian
# identity <prod e^{X_p}> = exp(sum_p <X_p^2>/2 + sum_{p<q} <X_p X_q>), with
# linear factors contracted pairwise (Wick).  All contractions reduce to three
# single-argument kernels tabulated on a uniform grid:
#     phi(t)   = int 4 J F^2/nu^2 [coth cos(nu t) - i sin(nu t)]
#     czz(t)   = int J (1-F)^2    [coth cos(nu t) - i sin(nu t)]
#     kappa(t) = int 2 J F(1-F)/nu [i coth sin(nu t) - cos(nu t)]
# with <X_s(t) X_s'(u)> = -s s' phi(t-u), <X_s(t) L(u)> = s kappa(t-u) and
# <L(t) X_s(u)> = -s kappa(t-u).
#
# The displaced reference state (the bath a lab-frame thermal state becomes
# after the |1>-conditioned transformation) shifts B_+/-(t) -> B_+/-(t) e^{-/+ 4 i psi(t)}
# and B_Z(t) -> B_Z(t) - Z(t).

import itertools
import threading
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING, Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import CubicSpline

from polaron_qrt.models import (
    BathIndex, DomainError, ExtrapolationError, Greek, Latin, NumericalError,
    SpectralDensityParams, parse_index,
)

if TYPE_CHECKING:
    from polaron_qrt.variational import VariationalSolution

# Configure logger for this module
logger = logging.getLogger(__name__)

KERNEL_NAMES = ('phi', 'czz', 'kappa')
NU_MIN_FACTOR = 1e-12

# vertex kinds
_PLUS, _MINUS, _LINEAR, _IDENTITY = 1, -1, 2, 0

TimeLike = Union[float, np.ndarray]


def spectral_density(nu: TimeLike, p: SpectralDensityParams) -> TimeLike:
    """J(nu) = alpha nu^s nu_c^(1-s) exp(-nu/nu_c)"""
    nu_arr = np.asarray(nu, dtype=float)
    if np.any(nu_arr < 0):
        raise DomainError("spectral density requires nu >= 0")
    value = p.alpha * np.power(nu_arr, p.s) * p.nu_c ** (1.0 - p.s) * np.exp(-nu_arr / p.nu_c)
    return float(value) if np.ndim(nu) == 0 else value


def coth(x: np.ndarray) -> np.ndarray:
    return 1.0 / np.tanh(x)


@dataclass(frozen=True)
class FrequencyGrid:
    """Composite Gauss-Legendre rule on [nu_min, nu_max]"""
    nodes: np.ndarray
    weights: np.ndarray
    nu_min: float
    nu_max: float
    panel_width: float

    def __len__(self) -> int:
        return len(self.nodes)

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(self.weights * values))


def build_frequency_grid(p: SpectralDensityParams, t_max: float = 0.0, panel_nodes: int = 16,
                         nu_max_factor: float = 40.0, refine: int = 1,
                         graded_panels: int = 40) -> FrequencyGrid:
    """
    Quadrature nodes for the bath integrals.

    Geometrically graded panels cover [1e-12 nu_c, h] so that nu^s endpoint
    behaviour and the F(nu) crossover near Delta_R are resolved; uniform panels
    of width h cover [h, 40 nu_c].  For oscillatory kernels out to t_max the
    panel width is capped at three periods, 6 pi / t_max.
    """
    nu_max = nu_max_factor * p.nu_c
    nu_min = NU_MIN_FACTOR * p.nu_c
    h = 0.25 * min(1.0, p.nu_c)
    if t_max > 0:
        h = min(h, 6.0 * np.pi / t_max)
    graded = np.geomspace(nu_min, h, graded_panels + 1)
    uniform = np.arange(h, nu_max, h)
    breaks = np.unique(np.concatenate([graded, uniform, [nu_max]]))
    if refine > 1:
        sub = np.linspace(0.0, 1.0, refine + 1)[:-1]
        lo, hi = breaks[:-1], breaks[1:]
        breaks = np.concatenate([(lo[:, None] + (hi - lo)[:, None] * sub[None, :]).ravel(), [nu_max]])
    x, w = leggauss(panel_nodes)
    lo, hi = breaks[:-1], breaks[1:]
    half = 0.5 * (hi - lo)
    nodes = (0.5 * (hi + lo))[:, None] + half[:, None] * x[None, :]
    weights = half[:, None] * w[None, :]
    return FrequencyGrid(nodes=nodes.ravel(), weights=weights.ravel(),
                         nu_min=nu_min, nu_max=nu_max, panel_width=h / refine)


def kernel_weights(grid: FrequencyGrid, p: SpectralDensityParams, F: np.ndarray) -> np.ndarray:
    """
    Columns (even_phi, odd_phi, even_czz, odd_czz, even_kappa, odd_kappa) such
    that kernel(t) = sum w [even cos(nu t) - i odd sin(nu t)].
    """
    nu = grid.nodes
    J = spectral_density(nu, p)
    ct = coth(0.5 * p.beta * nu)
    F = np.broadcast_to(np.asarray(F, dtype=float), nu.shape)
    one_minus = 1.0 - F
    phi_w = 4.0 * J * F ** 2 / nu ** 2
    czz_w = J * one_minus ** 2
    kap_w = 2.0 * J * F * one_minus / nu
    cols = np.stack([phi_w * ct, phi_w, czz_w * ct, czz_w, -kap_w, -kap_w * ct], axis=1)
    return cols * grid.weights[:, None]


def _transform(nodes: np.ndarray, weights: np.ndarray, taus: np.ndarray) -> np.ndarray:
    """Direct evaluation of the three kernels at arbitrary times, shape (n_tau, 3)"""
    raw = np.exp(-1j * np.outer(taus, nodes)) @ weights
    return raw[:, 0::2].real + 1j * raw[:, 1::2].imag


def _tabulate(nodes: np.ndarray, weights: np.ndarray, dtau: float, n_tau: int,
              block: int = 32, workers: int = 1) -> np.ndarray:
    """
    Kernels on tau_n = n dtau.  Each block of `block` consecutive times reuses the
    phase table exp(-i nu j dtau) and a single block phase exp(-i nu n0 dtau).
    """
    steps = np.exp(-1j * np.outer(np.arange(block) * dtau, nodes))
    starts = list(range(0, n_tau, block))
    out = np.empty((n_tau, 3), dtype=complex)

    def run(n0: int) -> None:
        m = min(block, n_tau - n0)
        shifted = np.exp(-1j * nodes * (n0 * dtau))[:, None] * weights
        raw = steps[:m] @ shifted
        out[n0:n0 + m] = raw[:, 0::2].real + 1j * raw[:, 1::2].imag

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, starts))
    else:
        for n0 in starts:
            run(n0)
    return out


def _expand(index: BathIndex, b_avg: float) -> List[Tuple[complex, int]]:
    """Linear expansion of a bath index into primitive vertices"""
    if index is Latin.X:
        return [(0.5, _PLUS), (0.5, _MINUS), (-b_avg, _IDENTITY)]
    if index is Latin.Y:
        return [(0.5j, _PLUS), (-0.5j, _MINUS)]
    if index is Latin.Z:
        return [(1.0, _LINEAR)]
    if index is Greek.PLUS:
        return [(1.0, _PLUS)]
    return [(1.0, _MINUS)]


def _pairing_sum(singles: List[np.ndarray], pairs: Dict[Tuple[int, int], np.ndarray],
                 remaining: Tuple[int, ...]):
    """Sum over partial pairings of linear vertices (singles contract with exponentials)"""
    if not remaining:
        return 1.0
    first, rest = remaining[0], remaining[1:]
    total = singles[first] * _pairing_sum(singles, pairs, rest)
    for k, other in enumerate(rest):
        total = total + pairs[(first, other)] * _pairing_sum(singles, pairs, rest[:k] + rest[k + 1:])
    return total


class CorrelationTables:
    """
    Immutable tabulation of phi, czz and kappa on tau in [0, T_table].

    Values at negative arguments follow from k(-t) = conj(k(t)); beyond T_table
    the kernels are treated as decayed (zero) unless strict lookups are requested.
    """

    def __init__(self, params: SpectralDensityParams, vsol: 'VariationalSolution',
                 dtau: float = 0.005, t_table: float = 200.0, panel_nodes: int = 16,
                 nu_max_factor: float = 40.0, workers: int = 1,
                 memory_tolerance: float = 1e-7, max_memory_time: float = 50.0):
        if dtau <= 0 or t_table <= 0:
            raise DomainError("dtau and t_table must be positive")
        self.params = params
        self.vsol = vsol
        self.B_avg = float(vsol.B_avg)
        self.delta = float(vsol.Delta)
        self.delta_r = float(vsol.Delta_R)
        self.dtau = float(dtau)
        self.panel_nodes = panel_nodes
        self.nu_max_factor = nu_max_factor
        n_tau = int(round(t_table / dtau)) + 1
        self.tau_grid = np.arange(n_tau) * self.dtau
        self.t_table = float(self.tau_grid[-1])

        self.grid = build_frequency_grid(params, t_max=self.t_table, panel_nodes=panel_nodes,
                                         nu_max_factor=nu_max_factor)
        F = vsol.response(self.grid.nodes)
        self._weights = kernel_weights(self.grid, params, F)
        logger.debug(f"Tabulating kernels: {n_tau} times x {len(self.grid)} frequencies")
        values = _tabulate(self.grid.nodes, self._weights, self.dtau, n_tau, workers=workers)
        if not np.all(np.isfinite(values)):
            raise NumericalError("non-finite bath kernel values", {'params': params.to_dict()})
        self._values = {name: values[:, k] for k, name in enumerate(KERNEL_NAMES)}
        self._splines = {name: CubicSpline(self.tau_grid, self._values[name]) for name in KERNEL_NAMES}
        self.memory_horizon = self._estimate_horizon(memory_tolerance, max_memory_time)
        self._derived: Dict[tuple, object] = {}
        self._lock = threading.RLock()
        self.diagnostics = {
            'phi0': complex(self._values['phi'][0]),
            'fc_mismatch': self.fc_mismatch(),
            'memory_horizon': self.memory_horizon,
            't_table': self.t_table,
            'n_frequencies': len(self.grid),
        }

    def cached(self, key: tuple, factory):
        """Memoize a quantity derived from these tables (generator tables, history integrals)"""
        with self._lock:
            if key not in self._derived:
                self._derived[key] = factory()
            return self._derived[key]

    # kernel lookups

    def kernel(self, name: str, tau: TimeLike, strict: bool = False) -> np.ndarray:
        if name not in self._splines:
            raise DomainError(f"unknown kernel {name!r}")
        tau = np.asarray(tau, dtype=float)
        mag = np.abs(tau)
        if strict and np.any(mag > self.t_table + 1e-12):
            raise ExtrapolationError(f"time {mag.max():.4g} beyond table range {self.t_table:.4g}",
                                     {'kernel': name, 't_table': self.t_table})
        inside = mag <= self.t_table
        value = np.where(inside, self._splines[name](np.minimum(mag, self.t_table)), 0.0)
        return np.where(tau < 0, np.conj(value), value)

    def phi(self, tau: TimeLike) -> np.ndarray:
        return self.kernel('phi', tau)

    def czz(self, tau: TimeLike) -> np.ndarray:
        return self.kernel('czz', tau)

    def kappa(self, tau: TimeLike) -> np.ndarray:
        return self.kernel('kappa', tau)

    def psi(self, t: TimeLike) -> np.ndarray:
        """psi(t) = int J F^2/nu^2 sin(nu t)"""
        return -0.25 * np.imag(self.phi(t))

    def Z(self, t: TimeLike) -> np.ndarray:
        """Z(t) = 2 int J F(1-F)/nu cos(nu t)"""
        return -np.real(self.kappa(t))

    def series(self, name: str) -> np.ndarray:
        return self._values[name].copy()

    def direct(self, name: str, taus: Iterable[float], refine: int = 10) -> np.ndarray:
        """On-demand quadrature on a grid refined `refine` times"""
        taus = np.atleast_1d(np.asarray(list(taus) if not isinstance(taus, np.ndarray) else taus, dtype=float))
        grid = build_frequency_grid(self.params, t_max=max(self.t_table, float(np.max(np.abs(taus)))),
                                    panel_nodes=self.panel_nodes, nu_max_factor=self.nu_max_factor,
                                    refine=refine)
        weights = kernel_weights(grid, self.params, self.vsol.response(grid.nodes))
        values = _transform(grid.nodes, weights, np.abs(taus))[:, KERNEL_NAMES.index(name)]
        return np.where(taus < 0, np.conj(values), values)

    def fc_mismatch(self) -> float:
        """|exp(-Re phi(0)/2) - <B>| on the table grid"""
        return float(abs(np.exp(-0.5 * self._values['phi'][0].real) - self.B_avg))

    def _estimate_horizon(self, tolerance: float, cap: float) -> float:
        horizon = 0.0
        for name in KERNEL_NAMES:
            mag = np.abs(self._values[name])
            scale = mag.max()
            if scale == 0:
                continue
            above = np.nonzero(mag > tolerance * scale)[0]
            if len(above):
                horizon = max(horizon, float(self.tau_grid[min(above[-1] + 1, len(self.tau_grid) - 1)]))
        if horizon > cap:
            logger.info(f"Kernel memory {horizon:.3g} exceeds cap {cap:.3g}; correction integrals saturate at the cap")
            horizon = cap
        return min(horizon, self.t_table)

    # correlation engine

    def _vertex_expectation(self, vertices: Sequence[Tuple[int, np.ndarray]], displaced: bool) -> np.ndarray:
        """
        Ordered expectation of primitive vertices (no identity vertices).

        The displaced reference is D tau_R D^dag with D the single displacement
        by f_k/nu_k (U_V = |1><1| D + |0><0| D^dag, B_+- = D^-+2).  Since
        [X_D, Y(t)] = -4i psi(t), each displacement vertex picks up exp(-+4i psi(t))
        and each linear vertex is shifted by -Z(t), giving Gamma_X = <B>(cos 4psi - 1),
        Gamma_Y = <B> sin 4psi and Gamma_Z = -Z.
        """
        disp = [(pos, kind, t) for pos, (kind, t) in enumerate(vertices) if kind in (_PLUS, _MINUS)]
        lin = [(pos, t) for pos, (kind, t) in enumerate(vertices) if kind == _LINEAR]
        shape = np.broadcast(*[t for _, t in vertices]).shape if vertices else ()
        if disp and self.B_avg <= 0.0:
            return np.zeros(shape, dtype=complex)

        log_amp = np.full(shape, len(disp) * np.log(self.B_avg) if disp else 0.0, dtype=complex)
        for (pa, sa, ta), (pb, sb, tb) in itertools.combinations(disp, 2):
            log_amp = log_amp - sa * sb * self.phi(ta - tb)
        if displaced:
            for _, sa, ta in disp:
                log_amp = log_amp - 4j * sa * self.psi(ta)

        singles = []
        for q, tq in lin:
            m = np.zeros(shape, dtype=complex)
            for p, sp, tp in disp:
                if q < p:
                    m = m - sp * self.kappa(tq - tp)
                else:
                    m = m + sp * self.kappa(tp - tq)
            if displaced:
                m = m - self.Z(tq)
            singles.append(m)
        pairs = {}
        for (a, (qa, ta)), (b, (qb, tb)) in itertools.combinations(enumerate(lin), 2):
            pairs[(a, b)] = self.czz(ta - tb)
        wick = _pairing_sum(singles, pairs, tuple(range(len(lin))))
        return np.exp(log_amp) * wick

    def evaluator(self, times: Sequence[TimeLike], displaced: bool = False) -> 'KernelEvaluator':
        return KernelEvaluator(self, times, displaced)

    def expectation(self, indices: Sequence[Union[str, BathIndex]], times: Sequence[TimeLike],
                    displaced: bool = False) -> np.ndarray:
        """<B_i1(t1) B_i2(t2) ...> in the thermal (or displaced) reference state"""
        return self.evaluator(times, displaced)(indices)

    def correlation(self, i, j, t: TimeLike, s: TimeLike = 0.0) -> np.ndarray:
        return self.expectation((i, j), (t, s))

    def gamma(self, i, t: TimeLike) -> np.ndarray:
        """Gamma_i(t) = tr[B_i(t)(tau_displaced - tau_R)]"""
        return self.expectation((i,), (t,), displaced=True) - self.expectation((i,), (t,))

    def inhomogeneous(self, i, j, t: TimeLike, s: TimeLike) -> np.ndarray:
        """C^I_ij(t, s) = tr[B_i(t) B_j(s)(tau_displaced - tau_R)]"""
        return self.expectation((i, j), (t, s), displaced=True) - self.expectation((i, j), (t, s))

    def three_time(self, i, j, k, t: TimeLike, s: TimeLike, tau: TimeLike) -> np.ndarray:
        return self.expectation((i, j, k), (t, s, tau))

    def kernel_frame(self, name: str) -> pd.DataFrame:
        """Kernel series as columns (t, s_opt, Re, Im)"""
        values = self._values[name]
        return pd.DataFrame({'t': self.tau_grid, 's_opt': np.nan, 'Re': values.real, 'Im': values.imag})


class KernelEvaluator:
    """
    Evaluates many index products at one fixed set of time arguments, caching
    the primitive vertex expectations they share.
    """

    def __init__(self, tables: CorrelationTables, times: Sequence[TimeLike], displaced: bool = False):
        self.tables = tables
        self.times = [np.asarray(t, dtype=float) for t in times]
        self.displaced = displaced
        self._cache: Dict[Tuple[Tuple[int, int], ...], np.ndarray] = {}

    def _primitive(self, key: Tuple[Tuple[int, int], ...]) -> np.ndarray:
        if key not in self._cache:
            vertices = [(kind, self.times[pos]) for pos, kind in key]
            self._cache[key] = self.tables._vertex_expectation(vertices, self.displaced)
        return self._cache[key]

    def __call__(self, indices: Sequence[Union[str, BathIndex]]) -> np.ndarray:
        indices = [parse_index(i) for i in indices]
        if len(indices) != len(self.times):
            raise DomainError("one time argument per bath index is required")
        b_avg = self.tables.B_avg
        total = 0.0
        for combo in itertools.product(*[_expand(i, b_avg) for i in indices]):
            coef = np.prod([c for c, _ in combo])
            if coef == 0:
                continue
            key = tuple((pos, kind) for pos, (_, kind) in enumerate(combo) if kind != _IDENTITY)
            total = total + coef * self._primitive(key)
        shape = np.broadcast(*self.times).shape if self.times else ()
        return np.broadcast_to(np.asarray(total, dtype=complex), shape).copy()


# module-level operations

def phi_kernel(tau: TimeLike, tables: CorrelationTables) -> np.ndarray:
    return tables.phi(tau)


HOMOGENEOUS_SUPPORTED = {
    ('X', 'X'), ('Y', 'Y'), ('Z', 'Z'), ('Y', 'Z'), ('Z', 'Y'), ('+', 'Z'), ('Z', '+'),
    ('-', 'Z'), ('Z', '-'), ('+', '+'), ('-', '-'), ('+', '-'), ('-', '+'),
}


def corr_homogeneous(i, j, tau: TimeLike, tables: CorrelationTables) -> np.ndarray:
    """
    Thermal two-time correlation <B_i(tau) B_j(0)>.

    Pairs outside the catalog (XZ, XY, ...) vanish identically; the engine
    returns their exact zero through cancellation of the same kernel values.
    """
    key = (parse_index(i).value, parse_index(j).value)
    if key not in HOMOGENEOUS_SUPPORTED:
        return np.zeros(np.shape(tau), dtype=complex)
    return tables.correlation(i, j, tau, 0.0)


def inhomog_scalars(t: TimeLike, tables: CorrelationTables) -> Tuple[np.ndarray, np.ndarray, Dict[str, np.ndarray]]:
    """(psi(t), Z(t), {index: Gamma_index(t)}) for X, Y, Z, +, -"""
    gammas = {idx: tables.gamma(idx, t) for idx in ('X', 'Y', 'Z', '+', '-')}
    return tables.psi(t), tables.Z(t), gammas


def corr_inhomogeneous(i, j, t: TimeLike, s: TimeLike, tables: CorrelationTables) -> np.ndarray:
    if np.any(np.asarray(t) < 0) or np.any(np.asarray(s) < 0):
        raise DomainError("inhomogeneous kernels take non-negative times")
    return tables.inhomogeneous(i, j, t, s)


def corr_three_time(i, j, k, t: TimeLike, s: TimeLike, tau: TimeLike, tables: CorrelationTables) -> np.ndarray:
    return tables.three_time(i, j, k, t, s, tau)
