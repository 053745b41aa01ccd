# polaron_qrt/scenarios.py
# Scenario orchestration: one config in, one output directory of CSV/JSON
# artifacts plus a manifest out.

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from polaron_qrt import __version__
from polaron_qrt.bath import KERNEL_NAMES, CorrelationTables
from polaron_qrt.config import ScenarioConfig, get_config
from polaron_qrt.logging_config import capture_numerical_events, log_numerical_event, log_run
from polaron_qrt.models import BathPreparation, ConfigurationError, ObservableMode
from polaron_qrt.observables import sigma_x_expectation_lab, sigma_z_expectation
from polaron_qrt.oracle import comparison_verdict, discretize_bath, exact_evolve, faithful_time
from polaron_qrt.regression import response_function, spectrum, steady_state
from polaron_qrt.system import EXCITED, GROUND, SystemOperators
from polaron_qrt.tcl2 import drive_horizon, propagate
from polaron_qrt.utils import build_manifest, ensure_output_dir, write_csv, write_json
from polaron_qrt.variational import SolverOptions, solve_frame, variational_scan

# Configure logger for this module
logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'


@dataclass
class ArtifactBundle:
    """Files written by one scenario run"""
    name: str
    output_dir: Path
    files: List[Path] = field(default_factory=list)
    manifest_path: Optional[Path] = None
    warnings: List[Dict[str, Any]] = field(default_factory=list)


def _switch(value: str) -> List[bool]:
    return {'on': [True], 'off': [False], 'both': [True, False]}[value]


def _modes(value: str) -> List[ObservableMode]:
    if value == 'both':
        return [ObservableMode.CORRECTED, ObservableMode.UNCORRECTED]
    return [ObservableMode(value)]


def _tag(inhomogeneous: bool) -> str:
    return 'inhom_on' if inhomogeneous else 'inhom_off'


def _initial_state(cfg: ScenarioConfig) -> np.ndarray:
    return EXCITED.copy() if cfg.dynamics.initial_state == 'excited' else GROUND.copy()


def build_tables(cfg: ScenarioConfig, workers: int = 1) -> Tuple[CorrelationTables, SystemOperators]:
    """Variational solution, kernel tables and system operators for a scenario"""
    p = cfg.spectral_params()
    frame_cfg = cfg.frame
    opts = SolverOptions(mixing=frame_cfg.mixing, tolerance=frame_cfg.tolerance,
                         max_iterations=frame_cfg.max_iterations)
    vsol = solve_frame(p, cfg.scenario.delta, frame_cfg.kind, opts)
    logger.info(f"Frame {frame_cfg.kind}: <B> = {vsol.B_avg:.6g}, Delta_R = {vsol.Delta_R:.6g}")
    k = cfg.kernels
    tables = CorrelationTables(p, vsol, dtau=k.dtau, t_table=k.t_table, panel_nodes=k.panel_nodes,
                               nu_max_factor=k.nu_max_factor, workers=workers,
                               memory_tolerance=k.memory_tolerance, max_memory_time=k.max_memory_time)
    return tables, SystemOperators(vsol.Delta, vsol.Delta_R)


def _horizons(tables: CorrelationTables) -> Dict[str, Any]:
    return {
        'memory_horizon': tables.memory_horizon,
        'drive_horizon': drive_horizon(tables),
        't_table': tables.t_table,
        'fc_mismatch': tables.fc_mismatch(),
        'B_avg': tables.B_avg,
        'Delta_R': tables.delta_r,
    }


def _write_kernels(tables: CorrelationTables, out: Path) -> List[Path]:
    return [write_csv(tables.kernel_frame(name), out / f"kernel_{name}.csv") for name in KERNEL_NAMES]


def run_dynamics(cfg: ScenarioConfig, out: Path, workers: int = 1) -> Tuple[List[Path], Dict[str, Any]]:
    tables, sysops = build_tables(cfg, workers)
    rho0 = _initial_state(cfg)
    modes = _modes(cfg.dynamics.mode)
    files: List[Path] = []
    for inhomogeneous in _switch(cfg.dynamics.inhomogeneous):
        opts = cfg.propagation_options(include_inhomogeneous=inhomogeneous)
        traj = propagate(rho0, opts, tables, sysops)
        columns = {'t': traj.times, 'sigma_z': sigma_z_expectation(traj)}
        if ObservableMode.CORRECTED in modes:
            columns['sigma_x_corrected'] = sigma_x_expectation_lab(
                traj, tables, ObservableMode.CORRECTED, include_inhomogeneous=opts.drive_enabled,
                stride=opts.history_stride)
        if ObservableMode.UNCORRECTED in modes:
            columns['sigma_x_uncorrected'] = sigma_x_expectation_lab(traj, tables, ObservableMode.UNCORRECTED)
        columns['trace_defect'] = traj.trace_defects
        columns['min_eigenvalue'] = traj.min_eigenvalues
        stem = f"dynamics_{_tag(inhomogeneous)}"
        files.append(write_csv(pd.DataFrame(columns), out / f"{stem}.csv"))
        files.append(write_json({
            'trajectory': traj.metadata(),
            'bath_preparation': opts.bath_preparation.value,
            'drive_enabled': opts.drive_enabled,
            'modes': [m.value for m in modes],
            'dt': opts.dt,
            't_final': opts.t_final,
            'diagnostics': tables.diagnostics,
        }, out / f"{stem}.json"))
    if cfg.output.write_kernels:
        files.extend(_write_kernels(tables, out))
    return files, _horizons(tables)


def run_spectrum(cfg: ScenarioConfig, out: Path, workers: int = 1) -> Tuple[List[Path], Dict[str, Any]]:
    tables, sysops = build_tables(cfg, workers)
    sc = cfg.spectrum
    n_tau = int(round(sc.tau_max / sc.dtau)) + 1
    tau_grid = np.arange(n_tau) * sc.dtau
    omega_grid = np.linspace(sc.omega_min, sc.omega_max, sc.n_omega)
    ss = steady_state(tables, sysops)
    modes = _modes(sc.mode)
    files: List[Path] = []
    metadata: Dict[str, Any] = {'steady_state': ss.to_dict(), 'window': sc.window, 'runs': {}}

    uncorrected = None
    if ObservableMode.UNCORRECTED in modes:
        record = response_function(tau_grid, ObservableMode.UNCORRECTED, tables, sysops, rho_ss=ss.rho)
        uncorrected = spectrum(record, sc.window, omega_grid, sc.decay_target)
        files.append(write_csv(pd.DataFrame({'tau': tau_grid, 'Re_S1': uncorrected.S1.real, 'Im_S1': uncorrected.S1.imag}),
                               out / 'response_uncorrected.csv'))
        metadata['runs']['uncorrected'] = uncorrected.metadata

    variants = _switch(sc.inhomogeneous) if ObservableMode.CORRECTED in modes else [None]
    for inhomogeneous in variants:
        columns = {'omega': omega_grid}
        suffix = ''
        if inhomogeneous is not None:
            suffix = f"_{_tag(inhomogeneous)}"
            record = response_function(tau_grid, ObservableMode.CORRECTED, tables, sysops, rho_ss=ss.rho,
                                       include_inhomogeneous=inhomogeneous, stride=cfg.dynamics.history_stride)
            corrected = spectrum(record, sc.window, omega_grid, sc.decay_target)
            files.append(write_csv(pd.DataFrame({'tau': tau_grid, 'Re_S1': corrected.S1.real, 'Im_S1': corrected.S1.imag}),
                                   out / f"response_corrected{suffix}.csv"))
            columns['A_corrected'] = corrected.A
            metadata['runs'][f"corrected{suffix}"] = corrected.metadata
        if uncorrected is not None:
            columns['A_uncorrected'] = uncorrected.A
        files.append(write_csv(pd.DataFrame(columns), out / f"spectrum{suffix}.csv"))
    files.append(write_json(metadata, out / 'spectrum.json'))
    if cfg.output.write_kernels:
        files.extend(_write_kernels(tables, out))
    return files, _horizons(tables)


def run_variational_scan(cfg: ScenarioConfig, out: Path, workers: int = 1) -> Tuple[List[Path], Dict[str, Any]]:
    scan = cfg.scan
    frame_cfg = cfg.frame
    opts = SolverOptions(mixing=frame_cfg.mixing, tolerance=frame_cfg.tolerance,
                         max_iterations=frame_cfg.max_iterations)
    frame, summary = variational_scan(cfg.spectral_params(), scan.alphas, scan.s_values, cfg.scenario.delta,
                                      scan.directions, workers, scan.czz_t_max, scan.czz_dtau, opts)
    files = [
        write_csv(frame, out / 'variational_scan.csv'),
        write_json(summary, out / 'variational_scan.json'),
    ]
    return files, {'czz_t_max': scan.czz_t_max}


def run_oracle_compare(cfg: ScenarioConfig, out: Path, workers: int = 1) -> Tuple[List[Path], Dict[str, Any]]:
    orc = cfg.oracle
    p = cfg.spectral_params()
    budget = orc.budget or get_config().ORACLE_AMPLITUDE_BUDGET
    n_t = int(round(orc.t_final / orc.dt)) + 1
    t_grid = np.arange(n_t) * orc.dt
    rho0 = _initial_state(cfg)
    prep = BathPreparation(cfg.dynamics.bath_prep)

    modes = discretize_bath(p, orc.N, orc.band or None, orc.n_max)
    result = exact_evolve(modes, rho0, prep, t_grid, delta=cfg.scenario.delta, beta=p.beta, budget=budget,
                          workers=workers, t_relax=orc.t_relax, ensemble=orc.ensemble, tail_tol=orc.tail_tol,
                          n_samples=orc.n_samples, seed=cfg.scenario.seed,
                          hook_time=orc.hook_time if orc.hook_time >= 0 else None, recurrence=orc.recurrence)

    tables, sysops = build_tables(cfg, workers)
    opts = cfg.propagation_options(include_inhomogeneous=cfg.dynamics.inhomogeneous != 'off')
    opts.t_final = float(t_grid[-1])
    traj = propagate(rho0, opts, tables, sysops)
    z_tcl2 = np.interp(t_grid, traj.times, sigma_z_expectation(traj))

    frame = pd.DataFrame({
        't': t_grid,
        'sigma_z_tcl2': z_tcl2,
        'sigma_z_oracle': result.sigma_z,
        'abs_error': np.abs(z_tcl2 - result.sigma_z),
        'oracle_stderr': result.sigma_z_stderr,
    })
    max_error = float(frame['abs_error'].max())
    faithful = faithful_time(p, modes, float(t_grid[-1]))
    verdict = comparison_verdict(max_error, faithful, float(t_grid[-1]), orc.agreement_tol)
    if verdict == 'divergent':
        log_numerical_event('oracle_divergent', {'max_abs_error': max_error, 'faithful_time': faithful,
                                                 't_final': float(t_grid[-1])})
    files = [write_csv(frame, out / 'oracle_compare.csv')]
    if result.two_time is not None:
        k = int(np.argmin(np.abs(t_grid - orc.hook_time)))
        lags = t_grid[k:] - t_grid[k]
        files.append(write_csv(pd.DataFrame({'tau': lags, 'Re_G': result.two_time.real, 'Im_G': result.two_time.imag}),
                               out / 'oracle_two_time.csv'))
    files.append(write_json({
        'modes': {'frequencies': modes.frequencies, 'couplings': modes.couplings, 'n_max': modes.n_max,
                  'band': modes.band},
        'covered_weight': result.covered_weight,
        'n_configurations': result.n_configurations,
        'oracle': result.diagnostics,
        'max_abs_error': max_error,
        'faithful_time': faithful,
        'verdict': verdict,
        'trajectory': traj.metadata(),
    }, out / 'oracle_compare.json'))
    horizons = _horizons(tables)
    horizons['recurrence_time'] = result.diagnostics['recurrence_time']
    return files, horizons


RUNNERS = {
    'variational-scan': run_variational_scan,
    'dynamics': run_dynamics,
    'spectrum': run_spectrum,
    'oracle-compare': run_oracle_compare,
}


@log_run
def run_scenario(cfg: ScenarioConfig, output_root: Optional[str] = None, workers: int = 1,
                 kind: Optional[str] = None) -> ArtifactBundle:
    """Run one scenario and write its artifacts plus a manifest"""
    env_config = get_config()
    cfg = cfg.with_defaults(env_config)
    kind = kind or cfg.kind
    if kind not in RUNNERS:
        raise ConfigurationError(f"unknown scenario kind {kind!r}")
    root = cfg.output.directory or output_root or env_config.OUTPUT_ROOT
    out = ensure_output_dir(root, cfg.name)
    logger.info(f"Running {kind} scenario '{cfg.name}' into {out}", extra={'scenario': cfg.name})

    with capture_numerical_events() as events:
        files, horizons = RUNNERS[kind](cfg, out, workers)

    manifest = build_manifest(out, files, cfg.to_dict(), cfg.config_hash(), __version__, horizons, list(events))
    manifest['kind'] = kind
    manifest['seed'] = cfg.scenario.seed
    manifest_path = write_json(manifest, out / MANIFEST_NAME)
    logger.info(f"Scenario '{cfg.name}' wrote {len(files)} files", extra={'scenario': cfg.name})
    return ArtifactBundle(name=cfg.name, output_dir=out, files=files, manifest_path=manifest_path,
                          warnings=list(events))


def run_batch(configs: Sequence[ScenarioConfig], output_root: Optional[str] = None, workers: int = 1,
              kind: Optional[str] = None) -> List[ArtifactBundle]:
    """Scenarios concurrently up to `workers`; each owns its output directory"""
    names = [c.name for c in configs]
    if len(set(names)) != len(names):
        raise ConfigurationError("scenario names in a batch must be unique")
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(lambda c: run_scenario(c, output_root, 1, kind), configs))
