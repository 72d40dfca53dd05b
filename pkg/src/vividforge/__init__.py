"""Desk-scale one-step flow-matching video face enhancement pipeline."""

__version__ = "0.1.0"
