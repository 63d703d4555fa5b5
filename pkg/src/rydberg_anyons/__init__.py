"""Rydberg-atom simulations of topological string order and anyon braiding."""

__version__ = "0.1.0"
