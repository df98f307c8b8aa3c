"""Generative modeling of distribution shifts: transport, flows, diffusion, robust stress tests."""

__version__ = "0.1.0"
