"""Delayed-reward credit assignment: reward redistribution models, agents, experiments."""

__version__ = "0.1.0"
