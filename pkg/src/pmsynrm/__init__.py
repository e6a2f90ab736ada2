"""Density-based topology optimisation of a permanent-magnet synchronous reluctance rotor."""
__version__ = "0.1.0"
