"""Kernel score models with learned local precisions, trained by terminal-time
implicit score matching."""

__version__ = "0.1.0"
