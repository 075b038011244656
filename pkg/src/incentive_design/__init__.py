"""Personalized financial-incentive design for behavioral weight-loss
interventions: behavioral simulation, surrogate-likelihood estimation,
outcome prediction, and budget-constrained adaptive incentive optimization."""

__version__ = "0.1.0"
