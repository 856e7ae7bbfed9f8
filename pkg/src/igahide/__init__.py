"""Trainable image data hiding with inverse-gradient attention masking."""

__version__ = "0.1.0"
