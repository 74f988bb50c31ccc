"""Digital-twin model recovery with a GRU neural-flow layer."""

__version__ = "0.1.0"
FORMAT_VERSION = 1
