"""Motion-guidance compiler and conditioning kernel for product-demonstration video models."""

__version__ = "0.1.0"
