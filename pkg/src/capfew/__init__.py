"""Few-shot video action classification over caption-augmented features."""

__version__ = "0.1.0"
