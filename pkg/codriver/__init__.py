"""Desk-scale driving co-pilot pipeline: scene analysis, behavior directives, simulation and metrics."""

__version__ = "0.1.0"
