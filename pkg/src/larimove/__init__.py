"""Simulation and estimation of animal movement under regular and LARI sampling designs."""

__version__ = "0.1.0"
