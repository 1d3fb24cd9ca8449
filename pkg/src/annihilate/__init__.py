"""Exact event-driven simulation and couplings for A+B -> 0 annihilating walks."""
__version__ = "0.1.0"
