"""Secure control simulator for multi-domain fog-radio-optical networks."""

__version__ = "0.1.0"
