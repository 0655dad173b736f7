"""Simulation and tomography of a nanophotonic spin-orbit qudit encoder."""

__version__ = "0.1.0"
