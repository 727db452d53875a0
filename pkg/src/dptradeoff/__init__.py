"""Benchmark harness for privacy/utility tradeoffs of differentially private ML."""

__version__ = "0.1.0"
