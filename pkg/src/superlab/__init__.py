"""Desk-scale laboratory for subcritical superprocesses on finite type spaces."""

__version__ = "0.1.0"
