"""Resonant beam positioning simulator"""

__version__ = "1.0.0"
