"""Bucketized cuckoo hash tables with pluggable eviction policies.

Serial tables support random-walk, queue, search-based and d-ary
eviction, optionally with ghost duplicates.  ``TxnEngine`` is a
multi-writer table driven by optimistic transactions.
"""

from .core import (
    CorruptStateError,
    InvalidConfigError,
    KeyEntry,
    KeyHasher,
    Policy,
    Table,
    TableConfig,
    delete,
    lookup,
    make_table,
    overwrite,
)
from .txn import AbortCause, EngineConfig, Transaction, TxnAborted, TxnEngine, preset
from .walks import WalkOutcome, insert

__all__ = [
    "AbortCause",
    "CorruptStateError",
    "EngineConfig",
    "InvalidConfigError",
    "KeyEntry",
    "KeyHasher",
    "Policy",
    "Table",
    "TableConfig",
    "Transaction",
    "TxnAborted",
    "TxnEngine",
    "WalkOutcome",
    "delete",
    "insert",
    "lookup",
    "make_table",
    "overwrite",
    "preset",
]
