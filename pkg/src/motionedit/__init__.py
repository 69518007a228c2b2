"""Skeleton-guided video motion editing with a spatio-temporal latent diffusion model."""

__version__ = "0.1.0"
