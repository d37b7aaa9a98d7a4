"""Multimodal generative recommendation with synergy-aware training."""

__version__ = "0.1.0"
