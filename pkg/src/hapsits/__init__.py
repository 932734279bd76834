"""HAPS-assisted caching and computation offloading for vehicular networks."""
__version__ = "0.1.0"
