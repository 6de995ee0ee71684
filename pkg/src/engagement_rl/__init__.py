"""Engagement-aware treatment recommendation: simulator, estimators, planners and sweeps."""

__version__ = "0.1.0"
