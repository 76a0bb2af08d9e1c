"""repscope: per-layer CNN activity patterns, RDM geometry, and CAM decoding."""

__version__ = "0.1.0"
