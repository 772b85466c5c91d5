"""Invariant metrics and geodesic-orbit tests on real flag manifolds of
classical type."""
__version__ = "0.1.0"
