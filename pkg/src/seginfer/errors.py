"""Exception types shared across the package."""


class SegInferError(Exception):
    """Base class for all package errors."""


class InputError(SegInferError):
    """Unusable user input: bad file, bad flag value, malformed image."""


class SegmentationError(SegInferError):
    """The segmentation algorithm cannot produce a valid two-region split."""


class TrackingBugError(SegInferError):
    """Event bookkeeping is inconsistent with the observed data.

    Raised when the observed statistic falls outside a recorded constraint,
    when an event intersection comes out empty, or when a traced re-run
    diverges from the plain run. Always indicates a bug, never bad input.
    """

    def __init__(self, message: str, origin: str = ""):
        super().__init__(f"{message} [origin: {origin}]" if origin else message)
        self.origin = origin


class DegenerateEventError(SegInferError):
    """The truncation event carries no representable probability mass."""
