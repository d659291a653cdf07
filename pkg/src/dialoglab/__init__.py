"""Hierarchical and non-hierarchical multi-turn dialog generation laboratory."""

__version__ = "0.1.0"
