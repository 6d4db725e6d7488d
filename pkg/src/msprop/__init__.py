"""Multi-species protein function prediction from structure and network propagation."""

__version__ = "0.1.0"
