"""Numerical partial linearization of nonautonomous ODEs near a flat invariant manifold."""

__version__ = "0.1.0"
