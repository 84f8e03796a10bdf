"""Exception types shared across the package."""


class FormatError(ValueError):
    """A scan, label, pose, schema, or weight file violates its format."""


class ConfigError(ValueError):
    """A run configuration is missing, malformed, or inconsistent."""


class EstimationError(RuntimeError):
    """Pose estimation could not be carried out for a frame pair."""


class InsufficientCandidatesError(EstimationError):
    """No registration candidates survive graph construction or masking."""


class ConfidenceLossError(EstimationError):
    """Total attention weight is too small to constrain the alignment."""


class DegenerateGeometryError(EstimationError):
    """Correspondence geometry is rank deficient (e.g. all points collinear)."""
