"""Lattice ABM simulation and equation learning (EQL) for coarse-grained ODE models."""

__version__ = "0.1.0"
