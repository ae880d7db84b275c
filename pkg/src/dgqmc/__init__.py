"""IPDG discretisation of random diffusion problems with QMC integration."""

__version__ = "0.1.0"
