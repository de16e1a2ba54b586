"""SIS diffusion on networks: simulation, mean-field polynomial dynamics and filtering."""

__version__ = "0.1.0"
