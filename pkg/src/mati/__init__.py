"""Region-aware mixture of experts with test-time aggregation for imbalanced tabular regression."""

__version__ = "0.1.0"
