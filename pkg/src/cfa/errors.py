"""Exception hierarchy shared across the package.

Three broad families map onto the CLI exit codes: configuration problems,
data/format problems, and numeric failures. Format errors are further split
so callers (and the fuzz tests) can tell apart the distinct ways a tensor
file can be malformed.
"""


class CfaError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(CfaError):
    """Invalid configuration: bad flags, unknown keys, N not dividing C, ..."""


class DataError(CfaError):
    """Invalid data: broken tensor files, inconsistent manifests, ..."""


class NumericError(CfaError):
    """Numeric failure: degenerate descriptor, non-finite loss, ..."""


# --- tensor file format errors (all DataError) ---


class TensorFormatError(DataError):
    """A tensor file failed to parse."""


class BadMagicError(TensorFormatError):
    """File does not start with the expected magic tag."""


class BadVersionError(TensorFormatError):
    """File carries an unsupported format version."""


class TruncatedFileError(TensorFormatError):
    """File ends before the declared header or payload is complete."""


class PayloadMismatchError(TensorFormatError):
    """Payload size does not match the declared shape."""


class ManifestError(DataError):
    """Dataset manifest violates an invariant (split leak, channel drift, ...)."""
