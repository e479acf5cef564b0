"""Contextual-bandit workbench contrasting policy-optimization and
Q-learning agents by the entropy of the policies they learn."""

__version__ = "0.1.0"
