"""Two-way text change detection between word images."""

__version__ = "0.1.0"
