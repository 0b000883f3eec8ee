"""Hilbert-space neural operators trained by PDE-residual minimization on spectral SPDE problems."""

__version__ = "0.1.0"
