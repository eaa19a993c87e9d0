"""Semantic bit allocation for a toy intra codec, learned with a DQN agent."""

__version__ = "0.1.0"
