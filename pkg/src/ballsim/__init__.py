"""Simulation and verification toolkit for filling-type balls-into-bins processes."""

__version__ = "0.1.0"
