"""Trace-driven model of object-store IO through the OS stack and an object drive."""

__version__ = "0.1.0"
