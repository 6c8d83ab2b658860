"""Serverless peer-to-peer messaging with a distributed store-and-forward fallback."""

__version__ = "0.1.0"
