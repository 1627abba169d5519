"""Cross-entropy unlearning losses and a desk-scale unlearning laboratory."""

__version__ = "0.1.0"
