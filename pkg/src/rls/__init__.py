"""Rollable latent space VAE for azimuth-robust SAR-style target recognition."""

__version__ = "0.1.0"
