"""Exception types raised across the package."""


class Y4MParseError(ValueError):
    """Malformed Y4M stream header or frame marker."""


class TruncatedFrameError(ValueError):
    def __init__(self, frame_index, expected, got):
        super().__init__(
            f"frame {frame_index}: expected {expected} payload bytes, got {got}"
        )
        self.frame_index = frame_index


class FitError(ValueError):
    """Power-law fit could not be computed from the given samples."""


class ModelShapeError(ValueError):
    """Model exponents have the wrong sign for the requested operation."""


class NonInvertibleError(ValueError):
    pass


class CalibrationError(ValueError):
    pass


class CodecRangeError(ValueError):
    """Lambda outside the codec's supported range."""


class InfeasibleBracketError(ValueError):
    """Per-frame distortion ranges do not overlap (D_LB >= D_UB)."""
