"""Power of tests for specification search in reported p-values."""

__version__ = "0.1.0"
