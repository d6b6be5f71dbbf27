"""Desk-scale style-based GAN inversion: a miniature generator, a
two-branch encoder, feature-aware latent editing, metrics, and the
surrounding tooling (CLI, HTTP service, training pipelines)."""

__version__ = "0.1.0"
