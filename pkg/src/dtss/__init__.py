"""Score-based transaction sequencing with leaf-space penalties, fork modelling and parameter search."""

__version__ = "0.1.0"
