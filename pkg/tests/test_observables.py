# tests/test_observables.py
# Tests for lab-frame sigma_z and sigma_x expectations

import numpy as np
import pytest

from polaron_qrt.models import ConfigurationError, DensityTrajectory, Frame, ObservableMode, PropagationOptions
from polaron_qrt.observables import (
    history_operators, sigma_x_components, sigma_x_expectation_lab, sigma_z_expectation,
)
from polaron_qrt.system import EXCITED, IDENTITY, SIGMA_X, SIGMA_Y, SystemOperators, rotate_states
from polaron_qrt.tcl2 import propagate


def constant_trajectory(rho, times, delta_r, inhomogeneous=False):
    """Interaction-picture trajectory that never leaves rho"""
    times = np.asarray(times, dtype=float)
    states = np.broadcast_to(rho, (len(times), 2, 2)).copy()
    return DensityTrajectory(times=times, states=states, delta_r=delta_r, frame=Frame.VARIATIONAL,
                             inhomogeneous=inhomogeneous, rho0=rho)


@pytest.fixture(scope='module')
def default_trajectory(default_tables, default_sysops):
    opts = PropagationOptions(dt=0.02, t_final=2.0, include_inhomogeneous=True, store_every=10)
    return propagate(EXCITED, opts, default_tables, default_sysops)


@pytest.mark.unit
class TestSigmaZ:
    """Test population expectation"""

    def test_free_precession(self):
        """Test sigma_z of a static interaction-picture state"""
        times = np.linspace(0, 6, 13)
        traj = constant_trajectory(EXCITED, times, 1.0)
        np.testing.assert_allclose(sigma_z_expectation(traj), -np.cos(times), atol=1e-12)


@pytest.mark.unit
class TestSigmaXUncorrected:
    """Test the factorized sigma_x estimate"""

    def test_scaled_by_franck_condon(self, default_tables):
        """Test uncorrected = <B> tr(sigma_x rho_S)"""
        rho = 0.5 * (IDENTITY + 0.6 * SIGMA_X + 0.3 * SIGMA_Y)
        traj = constant_trajectory(rho, [0.0, 0.5, 1.0], default_tables.delta_r)
        states = rotate_states(traj.states, -traj.times, traj.delta_r)
        expected = default_tables.B_avg * np.real(np.einsum('ij,nji->n', SIGMA_X, states))
        np.testing.assert_allclose(sigma_x_expectation_lab(traj, default_tables, 'uncorrected'), expected)

    def test_without_tables(self):
        """Test the uncorrected value falls back to <B> = 1"""
        rho = 0.5 * (IDENTITY + SIGMA_X)
        traj = constant_trajectory(rho, [0.0, 1.0], 1.0)
        np.testing.assert_allclose(sigma_x_expectation_lab(traj, None, ObservableMode.UNCORRECTED), [1.0, 1.0])


@pytest.mark.physics
class TestSigmaXCorrected:
    """Test the correlated sigma_x estimate"""

    def test_requires_tables(self):
        """Test corrected mode without tables raises"""
        traj = constant_trajectory(EXCITED, [0.0], 1.0)
        with pytest.raises(ConfigurationError):
            sigma_x_expectation_lab(traj, None, 'corrected')

    def test_decoupled_corrections_vanish(self, free_tables):
        """Test alpha = 0 makes corrected and uncorrected identical"""
        rho = 0.5 * (IDENTITY + 0.4 * SIGMA_X + 0.2 * SIGMA_Y)
        traj = constant_trajectory(rho, np.linspace(0, 3, 7), free_tables.delta_r, inhomogeneous=True)
        corrected = sigma_x_expectation_lab(traj, free_tables, 'corrected')
        uncorrected = sigma_x_expectation_lab(traj, free_tables, 'uncorrected')
        np.testing.assert_allclose(corrected, uncorrected, atol=1e-14)

    def test_weak_frame_corrections_vanish(self, weak_tables):
        """Test F = 0 makes corrected and uncorrected identical"""
        rho = 0.5 * (IDENTITY + 0.4 * SIGMA_X)
        traj = constant_trajectory(rho, np.linspace(0, 3, 7), weak_tables.delta_r)
        np.testing.assert_allclose(sigma_x_expectation_lab(traj, weak_tables, 'corrected'),
                                   sigma_x_expectation_lab(traj, weak_tables, 'uncorrected'), atol=1e-14)

    def test_components(self, default_trajectory, default_tables):
        """Test the three contributions and their sum"""
        parts = sigma_x_components(default_trajectory, default_tables)
        assert set(parts) == {'relevant', 'history', 'initial'}
        assert parts['history'][0] == 0.0
        assert parts['initial'][0] == 0.0
        assert np.max(np.abs(parts['history'][1:])) > 0.0
        total = np.real(parts['relevant'] + parts['history'] + parts['initial'])
        np.testing.assert_allclose(sigma_x_expectation_lab(default_trajectory, default_tables), total)

    def test_corrections_at_default_point(self, default_trajectory, default_tables):
        """Test corrected and uncorrected agree at t = 0 and separate afterwards"""
        corrected = sigma_x_expectation_lab(default_trajectory, default_tables, 'corrected')
        uncorrected = sigma_x_expectation_lab(default_trajectory, default_tables, 'uncorrected')
        assert corrected[0] == pytest.approx(uncorrected[0])
        assert np.all(np.isfinite(corrected))
        assert np.all(np.abs(corrected) <= 1.0 + 1e-6)
        assert np.max(np.abs(corrected - uncorrected)) > 1e-6

    def test_history_tables_cached(self, default_tables, default_sysops):
        """Test history tables are built once per tables instance"""
        first = history_operators(default_tables, default_sysops)
        assert history_operators(default_tables, SystemOperators(default_sysops.delta, default_sysops.delta_r)) is first
