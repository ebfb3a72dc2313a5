"""Frame captioning and feature extraction into CAPF v1 stores."""

__version__ = "0.1.0"
