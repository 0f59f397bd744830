"""Query processing over encrypted tables using per-row partition bits.

Sensitive cells are encrypted client-side; each row also carries reference
bits recording which owner-declared partition every sensitive value falls in.
Queries are rewritten into bitmask predicates the untrusted store can
evaluate, and the client decrypts and re-filters only the candidates.
"""
from .codec import BitVector, EncryptedRow, encode_bits, encrypt_row
from .crypto import KeyMaterial, decrypt_name, derive_keys, encrypt_name, generate_secret
from .engine import CandidateStats, PlainTable, QueryManager, ResultSet, oracle_execute
from .errors import (
    AuthenticationError,
    BitshieldError,
    CorruptCiphertextError,
    CryptoError,
    KeyMismatchError,
    ResolutionError,
    RewriteError,
    SchemaError,
    SqlSyntaxError,
    StoreError,
    UncoveredValueError,
)
from .rewriter import Keyring, QueryRewriter, rewrite_query
from .schema import SchemaRegistry, TableSchema, build_layout, define_table
from .sql import emit_sql, format_query, parse
from .store import CloudStore

__version__ = "0.1.0"

__all__ = [
    "AuthenticationError", "BitVector", "BitshieldError", "CandidateStats", "CloudStore",
    "CorruptCiphertextError", "CryptoError", "EncryptedRow", "KeyMaterial", "KeyMismatchError",
    "Keyring", "PlainTable", "QueryManager", "QueryRewriter", "ResolutionError", "ResultSet",
    "RewriteError", "SchemaError", "SchemaRegistry", "SqlSyntaxError", "StoreError",
    "TableSchema", "UncoveredValueError", "build_layout", "decrypt_name", "define_table",
    "derive_keys", "emit_sql", "encode_bits", "encrypt_name", "encrypt_row", "format_query",
    "generate_secret", "oracle_execute", "parse", "rewrite_query",
]
