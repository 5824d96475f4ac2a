"""Goal-conditioned latent diffusion trajectory planner at desk scale."""

__version__ = "0.1.0"
