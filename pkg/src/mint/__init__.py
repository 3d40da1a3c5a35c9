"""Multi-network pre-training for temporal graph property prediction."""

__version__ = "0.1.0"
