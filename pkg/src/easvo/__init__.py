"""Rotation estimation from intensity frames enhanced with event data."""

__version__ = "0.1.0"
