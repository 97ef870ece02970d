"""Robust text classification by Dirichlet sampling over synonym convex hulls."""

__version__ = "0.1.0"
