"""Distance-geometry flow matching for transition-state prediction."""

__version__ = "0.1.0"
