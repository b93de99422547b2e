"""Offline MRCP movement decoding: preprocessing, epoching, CNN / sLDA / RF."""

__version__ = "0.1.0"
