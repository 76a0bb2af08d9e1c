"""rsexport: converts images and checkpoints into repscope's on-disk formats
and provides an independent torch/numpy oracle for cross-validation."""

__version__ = "0.1.0"


class ExportError(Exception):
    """Input cannot be converted (bad config, undecodable payload)."""

    exit_code = 70


class UnsupportedLayer(ExportError):
    """Checkpoint layer not expressible in the analysis network vocabulary."""

    exit_code = 71
