"""Group inference in overlapping multi-agent swarms from second-order attention."""

__version__ = "0.1.0"
