"""Robust sensing: recover a vector from many small linear sensor subsystems,
some unreliable, by exploiting block sparsity of the residuals."""

__version__ = "0.1.0"
