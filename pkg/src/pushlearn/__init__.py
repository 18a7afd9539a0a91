"""Distributed non-Bayesian learning over time-varying directed graphs."""

__version__ = "0.1.0"
