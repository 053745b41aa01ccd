# tests/test_cli.py
# Tests for the click command-line interface

import logging

import pandas as pd
import pytest
from click.testing import CliRunner

from app import create_app
from polaron_qrt.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, cli, main
from polaron_qrt.utils import read_json

from tests.conftest import CONFIG_DIR, FIXTURE_DIR


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def small_config():
    return FIXTURE_DIR / 'small.toml'


@pytest.mark.cli
class TestValidateConfig:
    """Test the validate-config command"""

    def test_valid_file(self, runner):
        """Test a shipped scenario validates and prints its hash"""
        path = CONFIG_DIR / 'superohmic_default.toml'
        result = runner.invoke(cli, ['validate-config', '--config', str(path)])
        assert result.exit_code == EXIT_OK
        assert 'OK (dynamics, hash ' in result.output

    def test_invalid_file(self, runner, output_dir):
        """Test an empty scenario exits with the validation code and lists the errors"""
        path = output_dir / 'empty.toml'
        path.write_text('', encoding='utf-8')
        result = runner.invoke(cli, ['validate-config', '--config', str(path)])
        assert result.exit_code == EXIT_VALIDATION
        assert 'bath.alpha: required field missing' in result.output

    def test_main_returns_code(self, output_dir):
        """Test main() returns the exit code instead of exiting"""
        path = output_dir / 'empty.toml'
        path.write_text('', encoding='utf-8')
        assert main(['validate-config', '--config', str(path)]) == EXIT_VALIDATION

    def test_bad_choice(self, runner, small_config):
        """Test an unknown --mode is a usage error"""
        result = runner.invoke(cli, ['dynamics', '--config', str(small_config), '--mode', 'sideways'])
        assert result.exit_code == EXIT_VALIDATION


@pytest.mark.cli
@pytest.mark.integration
class TestDynamicsCommand:
    """Test the dynamics command end to end on a cheap scenario"""

    def test_writes_artifacts(self, runner, small_config, output_dir):
        """Test both inhomogeneous variants, sidecars and the manifest"""
        out = output_dir / 'runs'
        result = runner.invoke(cli, ['dynamics', '--config', str(small_config), '--out', str(out)])
        assert result.exit_code == EXIT_OK, result.output
        run_dir = out / 'small'
        manifest = read_json(run_dir / 'manifest.json')
        listed = {entry['path'] for entry in manifest['files']}
        assert listed == {'dynamics_inhom_on.csv', 'dynamics_inhom_on.json',
                          'dynamics_inhom_off.csv', 'dynamics_inhom_off.json'}
        assert manifest['kind'] == 'dynamics'
        assert manifest['seed'] == 7
        assert all(len(entry['sha256']) == 64 for entry in manifest['files'])

        frame = pd.read_csv(run_dir / 'dynamics_inhom_on.csv')
        assert list(frame.columns) == ['t', 'sigma_z', 'sigma_x_corrected', 'sigma_x_uncorrected',
                                       'trace_defect', 'min_eigenvalue']
        assert len(frame) == 51
        assert frame['sigma_z'].iloc[0] == pytest.approx(-1.0)
        assert frame['trace_defect'].max() < 1e-10

    def test_csv_reproducible(self, runner, small_config, output_dir):
        """Test two runs of the same scenario write identical CSV bytes"""
        contents = []
        for tag in ('first', 'second'):
            out = output_dir / tag
            result = runner.invoke(cli, ['dynamics', '--config', str(small_config), '--out', str(out),
                                         '--mode', 'uncorrected', '--inhomogeneous', 'off'])
            assert result.exit_code == EXIT_OK, result.output
            contents.append((out / 'small' / 'dynamics_inhom_off.csv').read_bytes())
        assert contents[0] == contents[1]

    def test_mode_override_drops_column(self, runner, small_config, output_dir):
        """Test --mode uncorrected omits the corrected column"""
        out = output_dir / 'runs'
        result = runner.invoke(cli, ['dynamics', '--config', str(small_config), '--out', str(out),
                                     '--mode', 'uncorrected', '--inhomogeneous', 'on'])
        assert result.exit_code == EXIT_OK, result.output
        frame = pd.read_csv(out / 'small' / 'dynamics_inhom_on.csv')
        assert 'sigma_x_corrected' not in frame.columns
        assert not (out / 'small' / 'dynamics_inhom_off.csv').exists()

    def test_strict_window_is_numerical_failure(self, runner, output_dir):
        """Test running past the kernel table with a strict window exits with the numerical code"""
        path = FIXTURE_DIR / 'strict.toml'
        result = runner.invoke(cli, ['dynamics', '--config', str(path), '--out', str(output_dir / 'runs')])
        assert result.exit_code == EXIT_NUMERICAL


@pytest.mark.cli
@pytest.mark.integration
class TestOtherCommands:
    """Test spectrum, oracle-compare and dump-kernel"""

    @pytest.mark.slow
    def test_spectrum(self, runner, output_dir):
        """Test the uncorrected spectrum run writes the response and spectrum tables"""
        path = FIXTURE_DIR / 'spectrum.toml'
        out = output_dir / 'runs'
        result = runner.invoke(cli, ['spectrum', '--config', str(path), '--out', str(out), '--mode', 'uncorrected'])
        assert result.exit_code == EXIT_OK, result.output
        run_dir = out / 'small'
        frame = pd.read_csv(run_dir / 'spectrum.csv')
        assert list(frame.columns) == ['omega', 'A_uncorrected']
        assert len(frame) == 11
        response = pd.read_csv(run_dir / 'response_uncorrected.csv')
        assert len(response) == 21
        assert read_json(run_dir / 'spectrum.json')['steady_state']['null_dimension'] == 1

    def test_oracle_budget(self, runner, output_dir):
        """Test an oversize oracle exits with the validation code and a suggestion"""
        path = FIXTURE_DIR / 'oracle_budget.toml'
        result = runner.invoke(cli, ['oracle-compare', '--config', str(path), '--out', str(output_dir / 'runs')])
        assert result.exit_code == EXIT_VALIDATION
        assert 'suggested truncation' in result.output

    def test_dump_kernel(self, runner, small_config, output_dir):
        """Test a single kernel table is written with its columns"""
        out = output_dir / 'kernels'
        result = runner.invoke(cli, ['dump-kernel', '--config', str(small_config), '--out', str(out),
                                     '--kernel', 'czz'])
        assert result.exit_code == EXIT_OK, result.output
        frame = pd.read_csv(out / 'small' / 'kernel_czz.csv')
        assert len(frame) == 501
        assert frame['t'].iloc[0] == 0.0

    def test_duplicate_batch_names(self, runner, small_config, output_dir):
        """Test a batch with repeated scenario names is refused"""
        result = runner.invoke(cli, ['dynamics', '--config', str(small_config), '--config', str(small_config),
                                     '--out', str(output_dir / 'runs')])
        assert result.exit_code == EXIT_VALIDATION


@pytest.mark.cli
def test_create_app(output_dir, monkeypatch):
    """Test the application factory configures the testing environment and returns the command group"""
    monkeypatch.chdir(output_dir)
    assert create_app('testing') is cli
    assert (output_dir / 'tests' / 'temp_runs').is_dir()
    package_logger = logging.getLogger('polaron_qrt')
    package_logger.handlers.clear()
    package_logger.propagate = True
    package_logger.setLevel(logging.NOTSET)
