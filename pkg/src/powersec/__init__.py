"""Power-system security assessment with ensemble decision trees."""

__version__ = "0.1.0"
