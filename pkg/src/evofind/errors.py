"""Shared exception types.

Every error the pipeline can raise is defined here so callers (and the CLI)
can catch one base class and still tell failures apart by type.
"""


class EvoFindError(Exception):
    """Base class for all errors raised by this package."""


# --- corpus ---------------------------------------------------------------

class NotElf(EvoFindError):
    """Input does not start with the ELF magic."""


class TruncatedFile(EvoFindError):
    """A declared section or table offset lies outside the file."""


class UnsupportedClass(EvoFindError):
    """ELF identification byte outside the supported range."""


class SchemaViolation(EvoFindError):
    """Feature-export document does not conform to the schema."""


class InvariantViolation(EvoFindError):
    """A record violates a count-sum or range invariant."""


class DuplicateAddress(EvoFindError):
    """Two function records share a start address."""


class EmptyName(EvoFindError):
    """Identity normalization was given an empty name."""


# --- shape ----------------------------------------------------------------

class EmptyInput(EvoFindError):
    """An operation requiring at least one element got none."""


class UnsortedInput(EvoFindError):
    """Input list violates the required strict address ordering."""


# --- align ----------------------------------------------------------------

class EmptyPool(EvoFindError):
    """Candidate pool is empty."""


class ArchMismatch(EvoFindError):
    """Two binaries expected to share an architecture do not."""


class VersionMismatch(EvoFindError):
    """Two binaries expected to share a version do not."""


# --- embed / prototype ----------------------------------------------------

class EmptyCorpus(EvoFindError):
    """IDF fitting requires a non-empty training slice."""


class EmptyTraining(EvoFindError):
    """Moment fitting requires a non-empty training slice."""


# --- eval -----------------------------------------------------------------

class EmptyQuerySet(EvoFindError):
    """Metric aggregation requires at least one query outcome."""


class ZeroPool(EvoFindError):
    """Inspection reduction is undefined for a zero mean pool size."""


class TruthNotInPool(EvoFindError):
    """Ground-truth candidate set is empty or not contained in the pool."""


class MissingBucket(EvoFindError):
    """A requested (version, arch) bucket is absent from the corpus."""


class LeakageError(EvoFindError):
    """Evaluation would overlap with the training slice."""


# --- patchproxy -----------------------------------------------------------

class NoFunctions(EvoFindError):
    """Binary-level metrics require at least one function."""


class MissingClass(EvoFindError):
    """Centroid fitting requires both class labels to be present."""


# --- synth / cli ----------------------------------------------------------

class InvalidConfig(EvoFindError):
    """Configuration value out of range or inconsistent."""


class ConfigHashMismatch(EvoFindError):
    """Index directory was built with a different configuration."""


class UnknownCommand(EvoFindError):
    """CLI subcommand not recognized."""
