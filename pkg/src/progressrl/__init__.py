"""Continual reinforcement learning engine with learned progress rewards.

Trains a Gaussian progress model on unlabeled demonstration trajectories,
shapes rewards through the induced potential, and optimizes a PPO policy
under coreset replay and synaptic-intelligence regularization across a
task sequence.
"""

from .backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
