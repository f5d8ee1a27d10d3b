"""Exception types shared across the package."""


class ClusterAugError(Exception):
    """Base class for package-specific errors."""


class ParseError(ClusterAugError):
    """A file does not conform to its documented format."""


class ValidationError(ClusterAugError):
    """Well-formed input that violates a semantic contract (BIO rules, config ranges)."""


class UnknownSlotError(ValidationError):
    """A placeholder names a slot type with no lexicon entries."""

    def __init__(self, slot_type: str):
        super().__init__(f"no lexicon entries for slot type {slot_type!r}")
        self.slot_type = slot_type


class TrainingError(ClusterAugError):
    """Optimization failed, e.g. the loss became non-finite."""

    def __init__(self, message: str, step: int | None = None):
        if step is not None:
            message = f"{message} (at step {step})"
        super().__init__(message)
        self.step = step
