"""Guided bridges with Girsanov reweighting and effective-dynamics guidance."""

__version__ = "0.1.0"
