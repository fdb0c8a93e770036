"""Key-centric encoding and two-network training for semi-structured object sequences."""

__version__ = "0.1.0"
