"""Evolution-aware function retrieval for stripped firmware binaries."""

__version__ = "0.1.0"
