"""Differentially private synthetic data from noisy marginal tables."""
