"""Laser-heating spectral tuning of quantum dots and photonic-crystal cavities
on thermally isolated suspended membranes.

Subpackages: device (geometry and rasterization), thermal (steady-state
conduction), spectral (temperature-dependent optics and spectra), control
(power calibration and inverse solvers), config (JSON IO), cli (command-line
front end).
"""

__all__ = ["device", "thermal", "spectral", "control", "config", "cli"]
__version__ = "0.1.0"
