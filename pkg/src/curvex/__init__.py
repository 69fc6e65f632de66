"""Level-set curvature with a neural error correction for under-resolved interfaces."""

__version__ = "0.1.0"
