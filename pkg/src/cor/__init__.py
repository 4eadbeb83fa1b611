"""Composed object retrieval: model, losses, metrics, data and annotation tooling."""

__version__ = "0.1.0"
