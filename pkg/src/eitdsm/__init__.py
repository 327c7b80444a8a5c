"""Direct sampling and integral-attention tools for impedance tomography."""

__version__ = "0.1.0"
