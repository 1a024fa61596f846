"""Algebra error classification from tutoring-system step logs."""

__version__ = "0.1.0"
