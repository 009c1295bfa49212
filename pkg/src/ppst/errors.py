"""Exception types shared across the package."""


class PpstError(Exception):
    """Base class for all package errors."""


class ConfigurationError(PpstError):
    """Invalid configuration value or incompatible component wiring."""


class InputError(PpstError):
    """Bad input data (unreadable image, empty text, ...). Carries the offending ref."""

    def __init__(self, message, ref=None):
        super().__init__(message)
        self.ref = ref


class CompatibilityError(PpstError):
    """Artifacts that do not belong together, e.g. adapters trained against a different LM."""


class TrainingDiverged(PpstError):
    """Non-finite loss encountered; training aborted."""


class ProtocolError(PpstError):
    """Malformed message on the external-scorer wire protocol."""


class ScorerUnavailable(PpstError):
    """External scorer endpoint could not be reached after retries."""
