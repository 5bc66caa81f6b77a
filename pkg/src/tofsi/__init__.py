"""Density-based topology optimization of structures loaded by steady
incompressible flow on a unified fluid/solid domain."""

__version__ = "0.1.0"
