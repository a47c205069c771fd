"""Deep Prior sound-field reconstruction with low-rank adaptation."""

__version__ = "0.1.0"
