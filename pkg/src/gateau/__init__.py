"""Graph-attention AlphaZero for chess on boards of any size."""

__version__ = "0.1.0"
