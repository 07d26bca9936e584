"""Exact simulation and compilation of prover-game protocols."""

__version__ = "0.1.0"
