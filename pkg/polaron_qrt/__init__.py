# polaron_qrt/__init__.py
"""Variational polaron TCL2 dynamics, dressed observables and regression spectra for the spin-boson model"""

__version__ = '1.0.0'
