"""Early prediction of conceptual understanding from simulation clickstreams."""

__version__ = "0.1.0"
