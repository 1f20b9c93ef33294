"""Denoising distantly supervised entity labels with hypergeometric batch weights."""

__version__ = "0.1.0"
