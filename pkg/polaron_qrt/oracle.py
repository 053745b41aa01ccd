# polaron_qrt/oracle.py
# Finite-mode exact benchmark for the spin-boson model.
#
# H = (Delta/2) sigma_x + sigma_z sum_k g_k (b_k + b_k^dag) + sum_k nu_k b_k^dag b_k
# on C^2 (x) prod_k C^(n_max+1), ordered system first.  The thermal bath is an
# ensemble of Fock configurations, either enumerated best-first until the
# uncovered Gibbs weight drops below a tolerance or sampled with a seeded
# generator.  Each member is a pure state evolved with expm_multiply.

import heapq
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from numpy.polynomial.legendre import leggauss
from scipy.linalg import eigh_tridiagonal, expm
from scipy.sparse.linalg import expm_multiply

from polaron_qrt.bath import coth, spectral_density
from polaron_qrt.logging_config import log_numerical_event, log_run
from polaron_qrt.models import (
    BathPreparation, BudgetExceededError, DensityTrajectory, DomainError, Frame, SpectralDensityParams,
)
from polaron_qrt.system import SIGMA_X, SIGMA_Z, dagger

# Configure logger for this module
logger = logging.getLogger(__name__)

DEFAULT_AMPLITUDE_BUDGET = 2_000_000


@dataclass(frozen=True)
class BathModeSet:
    """Discrete modes with J(nu) ~ sum_k g_k^2 delta(nu - nu_k)"""
    frequencies: np.ndarray
    couplings: np.ndarray
    n_max: int
    band: float

    @property
    def N(self) -> int:
        return len(self.frequencies)

    @property
    def hilbert_dimension(self) -> int:
        return 2 * (self.n_max + 1) ** self.N

    def moment(self, m: int) -> float:
        return float(np.sum(self.couplings ** 2 * self.frequencies ** m))

    def recurrence_time(self) -> float:
        """2 pi over the smallest spacing (or frequency) of the modes"""
        nu = np.sort(self.frequencies)
        gaps = np.diff(nu) if len(nu) > 1 else nu
        return float(2.0 * np.pi / np.min(gaps))

    def with_n_max(self, n_max: int) -> 'BathModeSet':
        return BathModeSet(self.frequencies, self.couplings, n_max, self.band)


def _weighted_measure(p: SpectralDensityParams, band: float, fine_panels: int = 400,
                      panel_nodes: int = 16) -> Tuple[np.ndarray, np.ndarray]:
    """Fine Gauss-Legendre discretization of the measure J(nu) d nu on [0, band]"""
    x, w = leggauss(panel_nodes)
    edges = np.linspace(0.0, band, fine_panels + 1)
    lo, hi = edges[:-1], edges[1:]
    nodes = (0.5 * (lo + hi))[:, None] + (0.5 * (hi - lo))[:, None] * x[None, :]
    weights = (0.5 * (hi - lo))[:, None] * w[None, :]
    nodes, weights = nodes.ravel(), weights.ravel()
    return nodes, weights * spectral_density(nodes, p)


def discretize_bath(p: SpectralDensityParams, N: int, band: Optional[float] = None,
                    n_max: int = 4) -> BathModeSet:
    """
    Gauss quadrature for the weight J(nu) on [0, band]: Lanczos with full
    reorthogonalization on a fine discretization of the measure, then
    Golub-Welsch.  Frequencies are the nodes and g_k^2 the weights.
    """
    if N < 1:
        raise DomainError("N must be >= 1")
    if p.alpha == 0:
        raise DomainError("discretization needs alpha > 0")
    band = float(band if band is not None else 10.0 * p.nu_c)
    if band < p.nu_c:
        logger.warning(f"Band {band:.3g} below nu_c = {p.nu_c:.3g}: spectral density under-covered")
        log_numerical_event('bath_band_undercovered', {'band': band, 'nu_c': p.nu_c})

    nodes, mass = _weighted_measure(p, band)
    total = float(np.sum(mass))
    q = np.sqrt(mass / total)
    basis = np.zeros((len(nodes), N))
    alpha = np.zeros(N)
    beta = np.zeros(max(N - 1, 0))
    basis[:, 0] = q
    for k in range(N):
        v = nodes * basis[:, k]
        alpha[k] = basis[:, k] @ v
        # full reorthogonalization against every previous Lanczos vector
        v -= basis[:, :k + 1] @ (basis[:, :k + 1].T @ v)
        v -= basis[:, :k + 1] @ (basis[:, :k + 1].T @ v)
        if k < N - 1:
            beta[k] = np.linalg.norm(v)
            if beta[k] < 1e-14:
                raise DomainError(f"measure supports fewer than {N} nodes")
            basis[:, k + 1] = v / beta[k]

    freqs, vecs = eigh_tridiagonal(alpha, beta)
    weights = total * vecs[0, :] ** 2
    return BathModeSet(frequencies=freqs, couplings=np.sqrt(weights), n_max=n_max, band=band)


def _thermal_correlation(nu: np.ndarray, weight: np.ndarray, t: np.ndarray, beta: float) -> np.ndarray:
    phase = np.outer(t, nu)
    return (np.cos(phase) * (weight * coth(0.5 * beta * nu))).sum(axis=1) - 1j * (np.sin(phase) * weight).sum(axis=1)


def faithful_time(p: SpectralDensityParams, modes: BathModeSet, t_max: float, tol: float = 0.05,
                  n_points: int = 401) -> float:
    """
    Longest time up to which the discrete bath correlation
    sum_k g_k^2 [coth(beta nu_k/2) cos(nu_k t) - i sin(nu_k t)] stays within
    tol |C(0)| of the continuum one on the same band.
    """
    t = np.linspace(0.0, t_max, n_points)
    nodes, mass = _weighted_measure(p, modes.band)
    reference = _thermal_correlation(nodes, mass, t, p.beta)
    discrete = _thermal_correlation(modes.frequencies, modes.couplings ** 2, t, p.beta)
    bad = np.nonzero(np.abs(discrete - reference) > tol * abs(reference[0]))[0]
    if len(bad) == 0:
        return float(t_max)
    return float(t[max(bad[0] - 1, 0)])


def comparison_verdict(max_error: float, faithful: float, horizon: float, tol: float = 0.02) -> str:
    """'agree' within tol, otherwise 'divergent' when the modes stop representing the bath before the horizon"""
    if max_error < tol:
        return 'agree'
    if faithful < horizon:
        return 'divergent'
    return 'disagree'


def _mode_operators(d: int) -> Tuple[sp.csr_matrix, sp.csr_matrix]:
    b = sp.diags(np.sqrt(np.arange(1, d)), 1, shape=(d, d), format='csr', dtype=complex)
    n = sp.diags(np.arange(d, dtype=float), 0, shape=(d, d), format='csr', dtype=complex)
    return b, n


def _embed(mode_op: sp.spmatrix, k: int, N: int, d: int) -> sp.csr_matrix:
    left = sp.identity(d ** k, format='csr', dtype=complex)
    right = sp.identity(d ** (N - k - 1), format='csr', dtype=complex)
    return sp.kron(sp.kron(left, mode_op), right, format='csr')


def build_hamiltonian(modes: BathModeSet, delta: float) -> sp.csr_matrix:
    d, N = modes.n_max + 1, modes.N
    b, n = _mode_operators(d)
    dim_b = d ** N
    coupling = sp.csr_matrix((dim_b, dim_b), dtype=complex)
    free = sp.csr_matrix((dim_b, dim_b), dtype=complex)
    for k in range(N):
        coupling = coupling + modes.couplings[k] * _embed(b + b.T, k, N, d)
        free = free + modes.frequencies[k] * _embed(n, k, N, d)
    eye_b = sp.identity(dim_b, format='csr', dtype=complex)
    H = (sp.kron(sp.csr_matrix(0.5 * delta * SIGMA_X), eye_b)
         + sp.kron(sp.csr_matrix(SIGMA_Z), coupling)
         + sp.kron(sp.identity(2, dtype=complex), free))
    return H.tocsr()


def _gibbs(modes: BathModeSet, beta: float) -> np.ndarray:
    """Per-mode occupation probabilities within the Fock truncation, shape (N, n_max+1)"""
    n = np.arange(modes.n_max + 1)
    logits = -beta * modes.frequencies[:, None] * n[None, :]
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    return probs / probs.sum(axis=1, keepdims=True)


def enumerate_configurations(probs: np.ndarray, tail_tol: float = 1e-3,
                             max_configurations: int = 5000) -> Tuple[List[Tuple[int, ...]], np.ndarray, float]:
    """Fock configurations in decreasing Gibbs weight until 1 - tail_tol is covered"""
    N, d = probs.shape
    order = np.argsort(-probs, axis=1)
    sorted_p = np.take_along_axis(probs, order, axis=1)

    def weight(ranks):
        return float(np.prod(sorted_p[np.arange(N), ranks]))

    start = (0,) * N
    heap = [(-weight(start), start)]
    seen = {start}
    configs, weights, covered = [], [], 0.0
    while heap and covered < 1.0 - tail_tol and len(configs) < max_configurations:
        neg_w, ranks = heapq.heappop(heap)
        configs.append(tuple(int(order[k, r]) for k, r in enumerate(ranks)))
        weights.append(-neg_w)
        covered += -neg_w
        for k in range(N):
            if ranks[k] + 1 < d:
                nxt = ranks[:k] + (ranks[k] + 1,) + ranks[k + 1:]
                if nxt not in seen:
                    seen.add(nxt)
                    heapq.heappush(heap, (-weight(nxt), nxt))
    return configs, np.asarray(weights), covered


def sample_configurations(probs: np.ndarray, n_samples: int, seed: int) -> List[Tuple[int, ...]]:
    rng = np.random.default_rng(seed)
    N, d = probs.shape
    draws = np.stack([rng.choice(d, size=n_samples, p=probs[k]) for k in range(N)], axis=1)
    return [tuple(int(x) for x in row) for row in draws]


def _fock_index(config: Sequence[int], d: int) -> int:
    idx = 0
    for n in config:
        idx = idx * d + n
    return idx


def _displacement(modes: BathModeSet) -> np.ndarray:
    """Dense product of single-mode displacements D(g_k/nu_k)"""
    d = modes.n_max + 1
    b = np.diag(np.sqrt(np.arange(1, d)), 1).astype(complex)
    out = np.ones((1, 1), dtype=complex)
    for g, nu in zip(modes.couplings, modes.frequencies):
        amp = g / nu
        out = np.kron(out, expm(amp * (b.T - b)))
    return out


@dataclass
class OracleResult:
    times: np.ndarray
    states: np.ndarray  # Schroedinger-picture reduced states, shape (n, 2, 2)
    sigma_z: np.ndarray
    sigma_z_stderr: np.ndarray
    covered_weight: float
    n_configurations: int
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    two_time: Optional[np.ndarray] = None

    def to_trajectory(self, rho0: np.ndarray) -> DensityTrajectory:
        """Lab-frame states tagged as the untransformed (weak) frame with no rotation"""
        return DensityTrajectory(times=self.times, states=self.states, delta_r=0.0, frame=Frame.WEAK,
                                 inhomogeneous=False, rho0=rho0)


class ExactOracle:
    """Exact propagation of the discretized model for one parameter set"""

    def __init__(self, modes: BathModeSet, delta: float = 1.0, beta: float = 1.0,
                 budget: int = DEFAULT_AMPLITUDE_BUDGET, workers: int = 1):
        if modes.hilbert_dimension > budget:
            raise BudgetExceededError(
                f"Hilbert dimension {modes.hilbert_dimension} exceeds the amplitude budget {budget}",
                suggest_truncation(modes.N, modes.n_max, budget))
        self.modes = modes
        self.delta = delta
        self.beta = beta
        self.workers = max(1, workers)
        self.d = modes.n_max + 1
        self.dim_b = self.d ** modes.N
        self.H = build_hamiltonian(modes, delta)
        self.H_relax = build_hamiltonian(modes, 0.0)
        self._displace = None

    def _initial_states(self, psi_sys: np.ndarray, config: Sequence[int], prep: BathPreparation) -> np.ndarray:
        bath = np.zeros(self.dim_b, dtype=complex)
        bath[_fock_index(config, self.d)] = 1.0
        if prep is BathPreparation.DISPLACED_THERMAL:
            if self._displace is None:
                self._displace = _displacement(self.modes)
            bath = self._displace @ bath
        return np.kron(psi_sys, bath)

    def _reduce(self, psi: np.ndarray) -> np.ndarray:
        """Reduced system states from (n, dim) amplitudes"""
        amps = psi.reshape(psi.shape[0], 2, self.dim_b)
        return np.einsum('nib,njb->nij', amps, amps.conj())

    def _evolve(self, psi0: np.ndarray, t_grid: np.ndarray, H: sp.csr_matrix) -> np.ndarray:
        if len(t_grid) == 1:
            return psi0[None, :]
        return expm_multiply(-1j * H, psi0, start=float(t_grid[0]), stop=float(t_grid[-1]),
                             num=len(t_grid), endpoint=True)

    def _member(self, psi_sys: np.ndarray, config, prep: BathPreparation, t_grid: np.ndarray,
                t_relax: float, hook_time: Optional[float]) -> Dict[str, Any]:
        psi0 = self._initial_states(psi_sys, config, prep)
        if prep is BathPreparation.RELAX_PROTOCOL and t_relax > 0:
            relax = expm_multiply(-1j * self.H_relax, psi0, start=0.0, stop=t_relax, num=2, endpoint=True)
            psi0 = relax[-1]
        psi = self._evolve(psi0, t_grid, self.H)
        energy = np.real(np.einsum('ni,ni->n', psi.conj(), (self.H @ psi.T).T))
        result = {
            'states': self._reduce(psi),
            'energy_drift': float(np.max(np.abs(energy - energy[0]))),
            'norm_drift': float(np.max(np.abs(np.linalg.norm(psi, axis=1) - 1.0))),
        }
        if hook_time is not None:
            k = int(np.argmin(np.abs(t_grid - hook_time)))
            # <sigma_x(t_h + tau) sigma_x(t_h)> = <psi(t_h + tau)| sigma_x e^{-iH tau} sigma_x |psi(t_h)>
            x_full = sp.kron(sp.csr_matrix(SIGMA_X), sp.identity(self.dim_b, dtype=complex), format='csr')
            kicked = x_full @ psi[k]
            after = self._evolve(kicked, t_grid[k:] - t_grid[k], self.H)
            x_ref = (x_full @ psi[k:].T).T
            result['two_time'] = np.einsum('ni,ni->n', x_ref.conj(), after)
        return result

    @log_run
    def evolve(self, rho0_system: np.ndarray, bath_prep: BathPreparation, t_grid: Sequence[float],
               t_relax: float = 20.0, ensemble: str = 'enumerate', tail_tol: float = 1e-3,
               n_samples: int = 64, seed: int = 0, hook_time: Optional[float] = None,
               recurrence: str = 'enforce') -> OracleResult:
        bath_prep = BathPreparation(bath_prep)
        t_grid = np.asarray(t_grid, dtype=float)
        if len(t_grid) > 1 and np.max(np.abs(np.diff(t_grid) - (t_grid[1] - t_grid[0]))) > 1e-9:
            raise DomainError("oracle time grid must be uniform")
        t_rec = self.modes.recurrence_time()
        if t_grid[-1] > t_rec:
            message = f"oracle horizon {t_grid[-1]:.3g} exceeds the recurrence time {t_rec:.3g}"
            if recurrence == 'enforce':
                raise DomainError(message)
            logger.warning(message)
            log_numerical_event('oracle_recurrence', {'t_final': float(t_grid[-1]), 'recurrence_time': t_rec})

        rho0_system = np.asarray(rho0_system, dtype=complex)
        evals, evecs = np.linalg.eigh(0.5 * (rho0_system + dagger(rho0_system)))
        pure = [(float(w), evecs[:, k]) for k, w in enumerate(evals) if w > 1e-12]

        probs = _gibbs(self.modes, self.beta)
        if ensemble == 'enumerate':
            configs, weights, covered = enumerate_configurations(probs, tail_tol)
            weights = weights / weights.sum()
        elif ensemble == 'sample':
            configs = sample_configurations(probs, n_samples, seed)
            weights = np.full(len(configs), 1.0 / len(configs))
            covered = 1.0
        else:
            raise DomainError("ensemble must be 'enumerate' or 'sample'")
        logger.info(f"Oracle ensemble: {len(configs)} configurations, dimension {self.modes.hilbert_dimension}")

        jobs = [(w_sys * w_cfg, psi_sys, cfg) for w_sys, psi_sys in pure for cfg, w_cfg in zip(configs, weights)]

        def run(job):
            weight, psi_sys, cfg = job
            return weight, self._member(psi_sys, cfg, bath_prep, t_grid, t_relax, hook_time)

        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            members = list(pool.map(run, jobs))

        states = sum(w * m['states'] for w, m in members)
        per_member_z = np.array([np.real(np.einsum('ij,nji->n', SIGMA_Z, m['states'])) for _, m in members])
        member_w = np.array([w for w, _ in members])
        sigma_z = np.real(np.einsum('ij,nji->n', SIGMA_Z, states))
        if ensemble == 'sample' and len(members) > 1:
            stderr = per_member_z.std(axis=0, ddof=1) / np.sqrt(len(members))
        else:
            # truncated enumeration: the uncovered weight bounds the bias of any |observable| <= 1
            stderr = np.full(len(t_grid), 2.0 * (1.0 - covered))
        two_time = None
        if hook_time is not None:
            two_time = sum(w * m['two_time'] for w, m in members)

        diagnostics = {
            'recurrence_time': t_rec,
            'energy_drift': max(m['energy_drift'] for _, m in members),
            'norm_drift': max(m['norm_drift'] for _, m in members),
            'hilbert_dimension': self.modes.hilbert_dimension,
            'ensemble': ensemble,
            'seed': seed if ensemble == 'sample' else None,
            'weight_sum': float(member_w.sum()),
        }
        return OracleResult(times=t_grid, states=states, sigma_z=sigma_z, sigma_z_stderr=stderr,
                            covered_weight=covered, n_configurations=len(configs),
                            diagnostics=diagnostics, two_time=two_time)


def suggest_truncation(N: int, n_max: int, budget: int) -> Dict[str, int]:
    """Largest (N, n_max) pair fitting the budget, shrinking n_max first"""
    for n in range(n_max, 0, -1):
        if 2 * (n + 1) ** N <= budget:
            return {'N': N, 'n_max': n}
    for m in range(N, 0, -1):
        if 2 * (n_max + 1) ** m <= budget:
            return {'N': m, 'n_max': n_max}
    return {'N': 1, 'n_max': 1}


def exact_evolve(modes: BathModeSet, rho0_system: np.ndarray, bath_prep: BathPreparation,
                 t_grid: Sequence[float], delta: float = 1.0, beta: float = 1.0,
                 budget: int = DEFAULT_AMPLITUDE_BUDGET, workers: int = 1, **kwargs) -> OracleResult:
    return ExactOracle(modes, delta, beta, budget, workers).evolve(rho0_system, bath_prep, t_grid, **kwargs)
