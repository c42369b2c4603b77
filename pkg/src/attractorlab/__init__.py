"""attractorlab: constructions and verification for expanding attractors."""

__version__ = "0.1.0"
