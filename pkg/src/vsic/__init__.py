"""Ground-state spin simulation and fitting for vanadium defects in 4H-SiC."""

__version__ = "0.1.0"
