"""Zoned UGV/UAV coalition planning with multi-agent reinforcement learning."""

__version__ = "0.1.0"
