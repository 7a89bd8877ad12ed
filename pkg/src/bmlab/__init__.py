"""Numerical laboratory for concavity of weighted marginals and related inequalities."""
__version__ = "0.1.0"
