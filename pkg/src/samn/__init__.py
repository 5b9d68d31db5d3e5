"""Sample attention memory network and its baselines for tabular data."""

__version__ = "0.1.0"
