"""RNN-T transfer-learning laboratory."""

__version__ = "0.1.0"
