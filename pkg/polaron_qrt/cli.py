# polaron_qrt/cli.py
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import click
import numpy as np

from polaron_qrt import __version__
from polaron_qrt.bath import KERNEL_NAMES
from polaron_qrt.config import MODES, SWITCHES, ScenarioConfig, get_config, load_scenario
from polaron_qrt.models import (
    BudgetExceededError, ConfigurationError, DomainError, NumericalError, PolaronError, ValidationError,
)
from polaron_qrt.scenarios import build_tables, run_batch, run_scenario
from polaron_qrt.utils import ensure_output_dir, write_csv

# Configure logger for this module
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def exit_code_for(error: Exception) -> int:
    """Map a failure to the documented process exit code"""
    if isinstance(error, (ValidationError, ConfigurationError, BudgetExceededError, DomainError)):
        return EXIT_VALIDATION
    return EXIT_NUMERICAL


def _report(error: Exception) -> None:
    if isinstance(error, ValidationError):
        click.echo('Configuration is invalid:', err=True)
        for message in error.errors:
            click.echo(f"  - {message}", err=True)
    elif isinstance(error, BudgetExceededError):
        click.echo(f"Error: {error}", err=True)
        click.echo(f"  suggested truncation: N={error.suggestion['N']}, n_max={error.suggestion['n_max']}", err=True)
    elif isinstance(error, NumericalError):
        click.echo(f"Numerical failure: {error}", err=True)
        for key, value in error.diagnostics.items():
            click.echo(f"  {key}: {value}", err=True)
    else:
        click.echo(f"Error: {error}", err=True)


def _load_all(paths: Sequence[str]) -> List[ScenarioConfig]:
    """Load every file, reporting all validation errors together"""
    configs, errors = [], []
    for path in paths:
        try:
            configs.append(load_scenario(path))
        except ValidationError as e:
            errors.extend(f"{Path(path).name}: {msg}" for msg in e.errors)
    if errors:
        raise ValidationError(errors)
    return configs


def _run(ctx: click.Context, kind: str, config_paths: Sequence[str], out: Optional[str], workers: Optional[int],
         mode: Optional[str] = None, inhomogeneous: Optional[str] = None) -> None:
    try:
        configs = _load_all(config_paths)
        configs = [c.with_overrides(mode=mode, inhomogeneous=inhomogeneous) for c in configs]
        workers = workers or get_config().DEFAULT_WORKERS
        if len(configs) == 1:
            bundles = [run_scenario(configs[0], out, workers, kind)]
        else:
            bundles = run_batch(configs, out, workers, kind)
    except PolaronError as e:
        logger.error(f"{kind} failed: {e}")
        _report(e)
        ctx.exit(exit_code_for(e))
        return
    except (ArithmeticError, np.linalg.LinAlgError) as e:
        logger.exception(f"{kind} failed with a numerical exception")
        click.echo(f"Numerical failure: {e}", err=True)
        ctx.exit(EXIT_NUMERICAL)
        return
    for bundle in bundles:
        click.echo(f"{bundle.name}: {len(bundle.files)} files, manifest {bundle.manifest_path}")
        if bundle.warnings:
            click.echo(f"  {len(bundle.warnings)} numerical warnings recorded in the manifest")
    ctx.exit(EXIT_OK)


config_option = click.option('--config', 'config_paths', multiple=True, required=True,
                             type=click.Path(dir_okay=False), help='Scenario TOML file (repeatable for a batch)')
out_option = click.option('--out', default=None, help='Output root directory')
workers_option = click.option('--workers', type=click.IntRange(min=1), default=None, help='Worker threads')
mode_option = click.option('--mode', type=click.Choice(MODES), default=None,
                           help='Emit corrected, uncorrected or both sigma_x variants')
inhom_option = click.option('--inhomogeneous', type=click.Choice(SWITCHES), default=None,
                            help='Include the initial-correlation terms')


@click.group()
@click.version_option(version=__version__, prog_name='polaron-qrt')
def cli():
    """Variational polaron TCL2 simulator for the spin-boson model"""


@cli.command('variational-scan')
@config_option
@out_option
@workers_option
@click.pass_context
def variational_scan_command(ctx, config_paths, out, workers):
    """Alpha sweeps of <B> and Delta_R over the configured ohmicities"""
    _run(ctx, 'variational-scan', config_paths, out, workers)


@cli.command('dynamics')
@config_option
@out_option
@workers_option
@mode_option
@inhom_option
@click.pass_context
def dynamics_command(ctx, config_paths, out, workers, mode, inhomogeneous):
    """TCL2 dynamics with lab-frame sigma_z and sigma_x"""
    _run(ctx, 'dynamics', config_paths, out, workers, mode, inhomogeneous)


@cli.command('spectrum')
@config_option
@out_option
@workers_option
@mode_option
@inhom_option
@click.pass_context
def spectrum_command(ctx, config_paths, out, workers, mode, inhomogeneous):
    """Steady-state response function and its spectrum"""
    _run(ctx, 'spectrum', config_paths, out, workers, mode, inhomogeneous)


@cli.command('oracle-compare')
@config_option
@out_option
@workers_option
@inhom_option
@click.pass_context
def oracle_compare_command(ctx, config_paths, out, workers, inhomogeneous):
    """TCL2 sigma_z against the finite-mode exact oracle"""
    _run(ctx, 'oracle-compare', config_paths, out, workers, None, inhomogeneous)


@cli.command('validate-config')
@config_option
@click.pass_context
def validate_config_command(ctx, config_paths):
    """Check scenario files without running them"""
    try:
        configs = _load_all(config_paths)
    except ValidationError as e:
        _report(e)
        ctx.exit(EXIT_VALIDATION)
        return
    for cfg in configs:
        click.echo(f"{cfg.source}: OK ({cfg.kind}, hash {cfg.config_hash()[:12]})")
    ctx.exit(EXIT_OK)


@cli.command('dump-kernel')
@config_option
@out_option
@click.option('--kernel', 'kernel_name', type=click.Choice(KERNEL_NAMES + ('all',)), default='all')
@click.pass_context
def dump_kernel_command(ctx, config_paths, out, kernel_name):
    """Write tabulated bath kernels as CSV (t, s_opt, Re, Im)"""
    names = KERNEL_NAMES if kernel_name == 'all' else (kernel_name,)
    try:
        for cfg in _load_all(config_paths):
            cfg = cfg.with_defaults()
            tables, _ = build_tables(cfg)
            target = ensure_output_dir(out or get_config().OUTPUT_ROOT, cfg.name)
            for name in names:
                path = write_csv(tables.kernel_frame(name), target / f"kernel_{name}.csv")
                click.echo(str(path))
    except PolaronError as e:
        _report(e)
        ctx.exit(exit_code_for(e))
        return
    ctx.exit(EXIT_OK)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        rv = cli.main(args=list(argv) if argv is not None else None, standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return EXIT_VALIDATION
    except click.Abort:
        return 1
    return rv if isinstance(rv, int) else EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
