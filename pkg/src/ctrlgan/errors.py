"""Exception types shared across the package.

The CLI maps these onto exit codes: validation/config problems exit 2,
numeric aborts during optimization exit 3.
"""


class ValidationError(ValueError):
    """Input data violates a documented contract (shape, range, pairing)."""


class DatasetError(ValidationError):
    """A dataset manifest or the files it references are broken."""


class ConfigError(ValueError):
    """Unknown key, unknown layer id, or an out-of-range configuration value."""


class NumericError(RuntimeError):
    """A loss or network output became non-finite.

    Carries the offending per-term report (if available) so the training
    loop can surface which term diverged.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
