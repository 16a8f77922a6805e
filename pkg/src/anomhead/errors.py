"""Exception types shared across the package.

Every error raised by this library derives from :class:`AnomheadError`, so
callers can catch one base class at a process boundary.  The CLI maps the
subfamilies to distinct exit codes (config vs. data vs. numerical failures).
"""


class AnomheadError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(AnomheadError, ValueError):
    """An argument violates a documented precondition (bad sigma, even patch size, ...)."""


class ShapeError(AnomheadError, ValueError):
    """Array dimensions are inconsistent with each other or with model parameters."""


class ConfigError(AnomheadError, ValueError):
    """A configuration references something that does not exist (e.g. a missing level)."""


class StateError(AnomheadError, RuntimeError):
    """An operation was called in the wrong lifecycle state (e.g. scoring before finalize)."""


class ConsistencyError(AnomheadError, RuntimeError):
    """Internal bookkeeping mismatch, e.g. a backward pass fed stale forward caches."""


class UndefinedMetricError(AnomheadError, ValueError):
    """A metric is mathematically undefined for the given inputs (single-class AUROC)."""


class SampleFailureError(AnomheadError, RuntimeError):
    """A per-sample failure inside a batch operation, tagged with the sample identity."""

    def __init__(self, sample_id, cause):
        super().__init__(f"sample {sample_id!r}: {cause}")
        self.sample_id = sample_id
        self.cause = cause


# ---------------------------------------------------------------------------
# File-format errors.  Readers raise a distinct class per failure mode so
# corruption, truncation and version skew are distinguishable programmatically.
# ---------------------------------------------------------------------------


class FileFormatError(AnomheadError, ValueError):
    """Base class for binary/manifest parsing failures."""


class BadMagicError(FileFormatError):
    """The file does not start with the expected magic bytes."""


class UnsupportedVersionError(FileFormatError):
    """The file declares a format version this reader does not understand."""


class ChecksumError(FileFormatError):
    """The payload CRC32 does not match the stored checksum."""


class TruncatedFileError(FileFormatError):
    """The file ends before the declared payload does (or is empty)."""


class ManifestError(FileFormatError):
    """A dataset manifest is structurally invalid (duplicate ids, missing files, ...)."""


class ProtocolViolationError(ManifestError):
    """The manifest breaks the one-class protocol (an anomalous sample in the train split)."""
