"""Resilient power-grid simulation with low-rank-regularized deep Q-learning."""

__version__ = "0.1.0"
