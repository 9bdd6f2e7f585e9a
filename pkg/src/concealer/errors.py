"""Exception types shared across the pipeline.

Kept free of crypto imports so the untrusted store can depend on this module
without widening its audit surface.
"""


class ConcealerError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(ConcealerError):
    """Invalid grid or workload configuration."""


class AuthenticationFailure(ConcealerError):
    """AEAD decryption failed: wrong key or tampered ciphertext."""


class AuthFailure(ConcealerError):
    """User authentication rejected."""


class AuthorizationFailure(AuthFailure):
    """Authenticated user is not allowed to run this query."""


class OutOfEpoch(ConcealerError):
    """Timestamp falls outside the epoch bounds."""


class EpochBoundsError(ConcealerError):
    """Input rows do not all belong to the epoch being encrypted."""


class EmptyEpoch(ConcealerError):
    """An epoch must contain at least one row."""


class CapacityError(ConcealerError):
    """A packing input exceeds the bin capacity."""


class BoundViolation(ConcealerError):
    """A packing plan violated its certified bounds (implementation bug)."""


class DivisibilityError(ConcealerError):
    """Super-bin count must divide the number of bins."""


class DuplicateEpoch(ConcealerError):
    """Epoch id already ingested."""


class CorruptPackage(ConcealerError):
    """Package bytes failed framing or magic checks."""


class UnknownEpoch(ConcealerError):
    """Epoch id not present in the store."""


class UnknownKey(ConcealerError):
    """Rewrite referenced an index key that does not exist."""


class IntegrityFailure(ConcealerError):
    """Hash-chain verification failed for fetched rows."""


class InsufficientFakes(ConcealerError):
    """The epoch does not carry enough padding rows for the requested plan."""


class UnsupportedVerification(ConcealerError):
    """Chain verification needs whole-group fetches, not partial ones."""
