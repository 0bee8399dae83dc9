"""Primal DPG Poisson solver with an algebraic block preconditioner."""

__version__ = "0.1.0"
