"""Detection and correction of in-distribution and out-of-distribution label noise."""

__version__ = "0.1.0"
