"""Exception types for the extraction pipeline."""


class AlignmentError(ValueError):
    """A parsing mask does not match its image's pixel grid."""


class DimensionError(ValueError):
    """A backbone changed its output width between images."""
