"""Privacy-preserving collaborative filtering: local obfuscation plus homomorphic aggregation."""

__version__ = "0.1.0"
