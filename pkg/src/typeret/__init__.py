"""Type retrieval and classification tooling for early printed books."""

__version__ = "0.1.0"
