"""Corridor traffic simulation with optimal vehicle-dynamics and hybrid torque-split control."""

__version__ = "0.1.0"
