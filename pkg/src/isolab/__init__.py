"""Numerical laboratory for isoperimetric problems in convex bodies and log-concave measures."""

__version__ = "0.1.0"
