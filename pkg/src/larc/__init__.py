"""Constraint-aware retrosynthesis search with a tool-using reaction judge."""

__version__ = "0.1.0"
