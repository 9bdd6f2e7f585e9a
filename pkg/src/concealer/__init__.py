"""Encrypted spatial time-series store with volume-hiding padding, an
untrusted indexed backend, and a trusted query processor."""

from .binpack import BinPlan, build_plan, build_super_bins, certify_bounds
from .crypto import MasterSecret, derive_epoch_key
from .encryptor import FakeStrategy, encrypt_epoch
from .errors import ConcealerError
from .grid import GridConfig, PlainTuple, build_grid
from .processor import Aggregate, Query, QueryResult, Session, TrustedProcessor
from .store import MISSING_ROW, Store
from .wire import EpochPackage, parse_package, serialize_package

__all__ = [
    "Aggregate",
    "BinPlan",
    "ConcealerError",
    "EpochPackage",
    "FakeStrategy",
    "GridConfig",
    "MISSING_ROW",
    "MasterSecret",
    "PlainTuple",
    "Query",
    "QueryResult",
    "Session",
    "Store",
    "TrustedProcessor",
    "build_grid",
    "build_plan",
    "build_super_bins",
    "certify_bounds",
    "derive_epoch_key",
    "encrypt_epoch",
    "parse_package",
    "serialize_package",
]
