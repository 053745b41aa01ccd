# tests/test_regression.py
# Tests for the steady state, two-time response and spectrum

import numpy as np
import pytest

from polaron_qrt.logging_config import capture_numerical_events
from polaron_qrt.models import DomainError, ObservableMode, ResponseRecord
from polaron_qrt.regression import (
    qrt_inhomogeneous_kernel, qrt_initial_relevant, response_function, spectrum, steady_state,
    uncorrected_response,
)
from polaron_qrt.system import IDENTITY, SIGMA_X, vec
from polaron_qrt.tcl2 import drive_horizon, saturated_generator

from tests.conftest import assert_density_operator


def synthetic_record(tau, response):
    """Record whose response (Im S1) is the given real signal"""
    return ResponseRecord(tau_grid=np.asarray(tau), S1=1j * np.asarray(response), mode=ObservableMode.UNCORRECTED)


@pytest.fixture(scope='module')
def default_steady(default_tables, default_sysops):
    return steady_state(default_tables, default_sysops)


@pytest.mark.physics
class TestSteadyState:
    """Test the stationary state of the saturated generator"""

    def test_decoupled_is_degenerate(self, free_tables, free_sysops):
        """Test alpha = 0 has a two-dimensional null space and returns I/2"""
        ss = steady_state(free_tables, free_sysops)
        assert ss.degenerate
        assert ss.null_dimension == 2
        np.testing.assert_allclose(ss.rho, 0.5 * IDENTITY)

    def test_default_point(self, default_steady):
        """Test a unique, valid steady state"""
        assert not default_steady.degenerate
        assert default_steady.null_dimension == 1
        assert_density_operator(default_steady.rho, tol=1e-8)
        assert default_steady.mismatch < 1e-8

    def test_stationary(self, default_steady, default_tables, default_sysops):
        """Test L_inf rho_ss = 0"""
        L = saturated_generator(default_tables, default_sysops)
        np.testing.assert_allclose(L @ vec(default_steady.rho), 0.0, atol=1e-10)

    def test_to_dict(self, default_steady):
        """Test serialization keeps the diagnostics"""
        data = default_steady.to_dict()
        assert data['null_dimension'] == 1
        assert len(data['rho']) == 2


@pytest.mark.physics
class TestResponse:
    """Test S1 in both modes"""

    def test_decoupled_uncorrected(self, free_tables, free_sysops):
        """Test alpha = 0 gives S1 = 1 and a vanishing response"""
        tau = np.linspace(0.0, 5.0, 51)
        record = response_function(tau, 'uncorrected', free_tables, free_sysops)
        np.testing.assert_allclose(record.S1, 1.0, atol=1e-12)
        np.testing.assert_allclose(record.response, 0.0, atol=1e-12)
        assert record.metadata['steady_state']['degenerate']

    def test_decoupled_corrected_matches_uncorrected(self, free_tables, free_sysops):
        """Test the corrections vanish without coupling"""
        tau = np.linspace(0.0, 2.0, 21)
        corrected = response_function(tau, ObservableMode.CORRECTED, free_tables, free_sysops)
        uncorrected = response_function(tau, ObservableMode.UNCORRECTED, free_tables, free_sysops)
        np.testing.assert_allclose(corrected.S1, uncorrected.S1, atol=1e-12)
        assert corrected.metadata['fourth_order_correction'] == 'omitted'

    def test_uncorrected_at_origin(self, default_steady, default_tables, default_sysops):
        """Test G(0) = sum_ab C_ab(0) tr[s_a s_b rho_ss]"""
        G = uncorrected_response(np.array([0.0, 0.1]), default_steady.rho, default_tables, default_sysops)
        expected = 0.0
        for a in ('+', '-'):
            for b in ('+', '-'):
                c_ab = complex(default_tables.correlation(a, b, 0.0, 0.0))
                expected += c_ab * np.trace(default_sysops.s[a] @ default_sysops.s[b] @ default_steady.rho)
        assert G[0] == pytest.approx(expected, rel=1e-12)

    def test_seed_without_history_is_factorized(self, free_tables, free_sysops):
        """Test the dressed seed reduces to sigma_x rho_ss when alpha = 0"""
        rho = 0.5 * IDENTITY
        np.testing.assert_allclose(qrt_initial_relevant(rho, free_tables, free_sysops), SIGMA_X @ rho, atol=1e-14)

    def test_corrected_origin_is_real(self, default_steady, default_tables, default_sysops):
        """Test S1(0) = <sigma_x^2> = 1 with the seed corrections cancelling the steady-state term"""
        tau = np.array([0.0, 0.1])
        record = response_function(tau, 'corrected', default_tables, default_sysops, rho_ss=default_steady.rho,
                                   stride=0.1)
        assert abs(record.S1[0].imag) < 1e-5
        assert record.S1[0].real == pytest.approx(1.0, abs=1e-4)

    def test_drive_vanishes_beyond_horizon(self, default_steady, default_tables, default_sysops):
        """Test the regression drive is switched off past the drive horizon"""
        tau = drive_horizon(default_tables) + 0.5
        np.testing.assert_array_equal(
            qrt_inhomogeneous_kernel(tau, default_steady.rho, default_tables, default_sysops), 0.0)

    def test_drive_is_traceless(self, default_steady, default_tables, default_sysops):
        """Test the drive preserves the trace of the propagated seed"""
        for tau in (0.0, 0.2, 1.0):
            drive = qrt_inhomogeneous_kernel(tau, default_steady.rho, default_tables, default_sysops, stride=0.1)
            assert abs(np.trace(drive)) < 1e-12

    def test_drive_parts(self, default_steady, default_tables, default_sysops):
        """Test the drive decomposition sums to the total"""
        parts = qrt_inhomogeneous_kernel(0.3, default_steady.rho, default_tables, default_sysops, stride=0.1, parts=True)
        total = qrt_inhomogeneous_kernel(0.3, default_steady.rho, default_tables, default_sysops, stride=0.1)
        assert set(parts) == {'qp', 'qq'}
        np.testing.assert_allclose(parts['qp'] + parts['qq'], total)

    def test_drive_negative_tau(self, default_steady, default_tables, default_sysops):
        """Test negative tau is rejected"""
        with pytest.raises(DomainError):
            qrt_inhomogeneous_kernel(-0.1, default_steady.rho, default_tables, default_sysops)

    @pytest.mark.slow
    def test_corrected_at_default_point(self, default_steady, default_tables, default_sysops):
        """Test the corrected response is finite and reports its terms"""
        tau = np.linspace(0.0, 1.0, 11)
        record = response_function(tau, 'corrected', default_tables, default_sysops, rho_ss=default_steady.rho,
                                   stride=0.1)
        assert np.all(np.isfinite(record.S1))
        assert set(record.metadata['term_magnitudes']) == {'history', 'measurement', 'initial', 'steady'}
        assert record.metadata['include_inhomogeneous']

    def test_corrected_without_drive(self, default_steady, default_tables, default_sysops):
        """Test switching the inhomogeneous terms off leaves only the relevant and history parts"""
        tau = np.linspace(0.0, 1.0, 11)
        record = response_function(tau, 'corrected', default_tables, default_sysops, rho_ss=default_steady.rho,
                                   include_inhomogeneous=False)
        magnitudes = record.metadata['term_magnitudes']
        assert magnitudes['measurement'] == 0.0
        assert magnitudes['initial'] == 0.0
        assert magnitudes['steady'] == 0.0
        assert magnitudes['history'] > 0.0

    @pytest.mark.parametrize('grid', [[0.1, 0.2, 0.3], [0.0, 0.1, 0.3], [0.0]])
    def test_invalid_grid(self, grid, free_tables, free_sysops):
        """Test grids must be uniform and start at zero"""
        with pytest.raises(DomainError):
            response_function(grid, 'uncorrected', free_tables, free_sysops)


@pytest.mark.unit
class TestSpectrum:
    """Test the one-sided Fourier transform"""

    def test_damped_sine(self):
        """Test A(omega) against 2 Re[omega_0 / ((gamma - i omega)^2 + omega_0^2)]"""
        gamma, omega0 = 0.5, 3.0
        tau = np.linspace(0.0, 60.0, 6001)
        record = synthetic_record(tau, np.exp(-gamma * tau) * np.sin(omega0 * tau))
        omega = np.array([0.0, 1.0, 2.5, 3.0, 5.0])
        result = spectrum(record, omega_grid=omega)
        expected = 2.0 * np.real(omega0 / ((gamma - 1j * omega) ** 2 + omega0 ** 2))
        np.testing.assert_allclose(result.A, expected, atol=1e-3)
        assert not result.metadata['truncated']
        assert result.metadata['window'] == 'none'

    def test_truncation_flag(self):
        """Test an undecayed response is flagged and logged"""
        tau = np.linspace(0.0, 10.0, 1001)
        record = synthetic_record(tau, np.sin(3.0 * tau))
        with capture_numerical_events() as events:
            result = spectrum(record, omega_grid=np.array([3.0]))
        assert result.metadata['truncated']
        assert any(e['event'] == 'response_truncated' for e in events)

    def test_auto_window(self):
        """Test auto apodization picks the exponential window for truncated signals"""
        tau = np.linspace(0.0, 10.0, 1001)
        result = spectrum(synthetic_record(tau, np.sin(3.0 * tau)), window='auto', omega_grid=np.array([3.0]))
        assert result.metadata['window'] == 'exponential'
        assert result.metadata['rate'] == pytest.approx(np.log(1e3) / 10.0)

    def test_gaussian_window(self):
        """Test the gaussian width defaults to a third of the span"""
        tau = np.linspace(0.0, 9.0, 91)
        result = spectrum(synthetic_record(tau, np.exp(-tau)), window='gaussian', omega_grid=np.array([0.0]))
        assert result.metadata['sigma'] == pytest.approx(3.0)

    def test_default_grid(self):
        """Test the default frequency grid"""
        tau = np.linspace(0.0, 30.0, 301)
        result = spectrum(synthetic_record(tau, np.exp(-tau) * np.sin(tau)))
        assert len(result.omega_grid) == 2201
        assert result.omega_grid[0] == -2.0 and result.omega_grid[-1] == 20.0

    def test_unknown_window(self):
        """Test unknown window names are rejected"""
        tau = np.linspace(0.0, 1.0, 11)
        with pytest.raises(DomainError):
            spectrum(synthetic_record(tau, np.zeros(11)), window='hann')
