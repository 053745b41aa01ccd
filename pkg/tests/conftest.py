# tests/conftest.py
# Pytest configuration and shared fixtures

import os
import shutil
import tempfile
from pathlib import Path

import numpy as np
import pytest

# Set test environment before importing the package
os.environ['POLARON_ENV'] = 'testing'

from polaron_qrt.bath import CorrelationTables
from polaron_qrt.models import SpectralDensityParams
from polaron_qrt.system import SystemOperators
from polaron_qrt.variational import fixed_frame, solve_self_consistent

PROJECT_ROOT = Path(__file__).resolve().parent.parent
CONFIG_DIR = PROJECT_ROOT / 'configs'
FIXTURE_DIR = PROJECT_ROOT / 'tests' / 'fixtures'


@pytest.fixture(scope='session')
def default_params():
    """Super-ohmic bath at the default point (s = 3, alpha = 0.1, nu_c = 10, beta Delta = 1)"""
    return SpectralDensityParams(alpha=0.1, nu_c=10.0, s=3.0, beta=1.0)


@pytest.fixture(scope='session')
def free_params():
    """Decoupled bath"""
    return SpectralDensityParams(alpha=0.0, nu_c=10.0, s=3.0, beta=1.0)


@pytest.fixture(scope='session')
def default_solution(default_params):
    return solve_self_consistent(default_params, 1.0)


@pytest.fixture(scope='session')
def default_tables(default_params, default_solution):
    """Reduced kernel tables: dtau = 0.01 out to t = 20"""
    return CorrelationTables(default_params, default_solution, dtau=0.01, t_table=20.0)


@pytest.fixture(scope='session')
def default_sysops(default_solution):
    return SystemOperators(default_solution.Delta, default_solution.Delta_R)


@pytest.fixture(scope='session')
def free_tables(free_params):
    vsol = solve_self_consistent(free_params, 1.0)
    return CorrelationTables(free_params, vsol, dtau=0.01, t_table=10.0)


@pytest.fixture(scope='session')
def free_sysops(free_tables):
    return SystemOperators(free_tables.delta, free_tables.delta_r)


@pytest.fixture(scope='session')
def weak_params():
    return SpectralDensityParams(alpha=0.02, nu_c=10.0, s=3.0, beta=1.0)


@pytest.fixture(scope='session')
def weak_tables(weak_params):
    """Lab-frame (F = 0) kernels with a grid the RK4 stages land on for dt = 0.01"""
    vsol = fixed_frame(weak_params, 1.0, 'weak')
    return CorrelationTables(weak_params, vsol, dtau=0.005, t_table=10.0)


@pytest.fixture(scope='function')
def output_dir():
    """Temporary output root removed after the test"""
    path = tempfile.mkdtemp(prefix='polaron_qrt_test_')
    yield Path(path)
    shutil.rmtree(path, ignore_errors=True)


@pytest.fixture
def small_scenario_dict():
    """Cheap dynamics scenario as a plain dict"""
    return {
        'scenario': {'name': 'small', 'kind': 'dynamics', 'seed': 7},
        'bath': {'alpha': 0.05, 'nu_c': 10.0, 's': 3.0, 'beta': 1.0},
        'kernels': {'dtau': 0.01, 't_table': 5.0},
        'dynamics': {'dt': 0.02, 't_final': 1.0, 'inhomogeneous': 'both', 'mode': 'both'},
        'spectrum': {'tau_max': 2.0, 'dtau': 0.1, 'n_omega': 11, 'omega_min': -1.0, 'omega_max': 4.0},
    }


# Custom assertion helpers
def assert_density_operator(rho, tol=1e-8):
    """Assert trace one, Hermitian and positive within tolerance"""
    rho = np.asarray(rho)
    assert abs(np.trace(rho) - 1.0) < tol
    assert np.linalg.norm(rho - rho.conj().T) < tol
    assert np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() > -tol
