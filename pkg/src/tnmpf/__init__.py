"""Dynamic multiproduct formulas with tensor-network classical preprocessing."""

__version__ = "0.1.0"
