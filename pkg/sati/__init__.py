"""Desk-scale multimodal sentiment model with disentangled representations."""

__version__ = "0.1.0"
