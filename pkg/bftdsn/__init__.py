"""Verifiable erasure-coded decentralized storage with storage-weighted BFT."""

__all__ = ["__version__"]
__version__ = "0.1.0"
