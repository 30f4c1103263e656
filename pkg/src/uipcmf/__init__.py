"""Prototype-based matrix factorization with learnable user/item prototype connections."""

__version__ = "0.1.0"
