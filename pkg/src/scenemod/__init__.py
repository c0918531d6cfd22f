"""Conditional scene-graph modification."""
__version__ = "0.1.0"
