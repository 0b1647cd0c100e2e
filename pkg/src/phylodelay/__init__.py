"""Effective population size from dated genealogies, with preferential sampling and reporting delays."""

__version__ = "0.1.0"
