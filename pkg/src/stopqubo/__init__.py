"""Transit stop consolidation as a competition-linearized QUBO."""

__version__ = "0.1.0"
