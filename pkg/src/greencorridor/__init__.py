"""Desk-scale emergency-vehicle green-corridor platform."""

__version__ = "0.1.0"
