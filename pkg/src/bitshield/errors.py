"""Exception hierarchy shared by every layer of the package."""


class BitshieldError(Exception):
    """Base class for all errors raised by bitshield."""


class SchemaError(BitshieldError, ValueError):
    """Invalid table definition or schema lookup."""


class UncoveredValueError(SchemaError):
    """A value falls outside every partition domain declared for its column."""

    def __init__(self, column, value):
        super().__init__(f"value {value!r} is not covered by any partition of column {column!r}")
        self.column = column
        self.value = value


class CryptoError(BitshieldError):
    pass


class CorruptCiphertextError(CryptoError):
    pass


class AuthenticationError(CryptoError):
    pass


class SqlSyntaxError(BitshieldError):
    def __init__(self, message, position):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


class ResolutionError(BitshieldError):
    """Unknown table/column, ambiguous reference, or literal of the wrong kind."""


class RewriteError(BitshieldError):
    """The query cannot be translated into a cloud predicate."""


class StoreError(BitshieldError):
    pass


class KeyMismatchError(BitshieldError):
    """Two tables combined by UNION/INTERSECT were encrypted under different keys."""
