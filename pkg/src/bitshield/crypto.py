"""Cell and identifier encryption.

Cell values use AES-256-CBC with a fresh random IV per call and PKCS#7
padding, so equal plaintexts never produce equal ciphertexts.  Table and
column names use AES-SIV, which is deterministic: the same name always maps to
the same token, letting the store address tables it cannot read.
"""
from __future__ import annotations

import base64
import binascii
import os
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes, padding
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.ciphers.aead import AESSIV
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import AuthenticationError, CorruptCiphertextError, CryptoError

SECRET_BYTES = 32
BLOCK = 16
_SALT = b"bitshield/v1"


@dataclass(frozen=True, repr=False)
class KeyMaterial:
    owner_secret: bytes
    value_key: bytes  # AES-256-CBC
    name_key: bytes  # AES-256-SIV (two 256-bit halves)

    def __repr__(self):
        return "KeyMaterial(<redacted>)"


@dataclass(frozen=True)
class Ciphertext:
    iv: bytes
    body: bytes

    def __post_init__(self):
        if len(self.iv) != BLOCK or not self.body or len(self.body) % BLOCK:
            raise CorruptCiphertextError("ciphertext has an invalid length")

    def to_text(self) -> str:
        return base64.b64encode(self.iv + self.body).decode("ascii")

    @classmethod
    def from_text(cls, text: str) -> "Ciphertext":
        try:
            raw = base64.b64decode(text.encode("ascii"), validate=True)
        except (binascii.Error, UnicodeEncodeError, AttributeError):
            raise CorruptCiphertextError("ciphertext is not valid base64") from None
        return cls(raw[:BLOCK], raw[BLOCK:])


def _hkdf(secret: bytes, label: bytes, length: int) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=length, salt=_SALT, info=label).derive(secret)


def derive_keys(owner_secret: bytes) -> KeyMaterial:
    if not isinstance(owner_secret, (bytes, bytearray)) or len(owner_secret) != SECRET_BYTES:
        raise CryptoError(f"owner secret must be exactly {SECRET_BYTES} bytes")
    secret = bytes(owner_secret)
    return KeyMaterial(secret, _hkdf(secret, b"value", 32), _hkdf(secret, b"name", 64))


def generate_secret() -> bytes:
    return os.urandom(SECRET_BYTES)


def encrypt_value(keys: KeyMaterial, plaintext: bytes) -> Ciphertext:
    iv = os.urandom(BLOCK)
    padder = padding.PKCS7(128).padder()
    data = padder.update(plaintext) + padder.finalize()
    enc = Cipher(algorithms.AES(keys.value_key), modes.CBC(iv)).encryptor()
    return Ciphertext(iv, enc.update(data) + enc.finalize())


def decrypt_value(keys: KeyMaterial, ct: Ciphertext) -> bytes:
    if not isinstance(ct, Ciphertext):
        raise CorruptCiphertextError("expected a Ciphertext")
    dec = Cipher(algorithms.AES(keys.value_key), modes.CBC(ct.iv)).decryptor()
    data = dec.update(ct.body) + dec.finalize()
    unpadder = padding.PKCS7(128).unpadder()
    try:
        return unpadder.update(data) + unpadder.finalize()
    except ValueError:
        raise CorruptCiphertextError("corrupt ciphertext: bad padding") from None


class CellDecryptor:
    """Fast path for decrypting many cells under one key.

    Keeps a single AES block-decryption context and applies the CBC chaining
    XOR itself, which avoids building a cipher object per cell.  Results are
    identical to :func:`decrypt_value`.  Not thread-safe; use one per query.
    """

    def __init__(self, keys: KeyMaterial):
        self._ctx = Cipher(algorithms.AES(keys.value_key), modes.ECB()).decryptor()

    def decrypt(self, ct: Ciphertext) -> bytes:
        if not isinstance(ct, Ciphertext):
            raise CorruptCiphertextError("expected a Ciphertext")
        body = ct.body
        raw = self._ctx.update(body)
        chain = ct.iv + body[:-BLOCK]
        data = (int.from_bytes(raw, "big") ^ int.from_bytes(chain, "big")).to_bytes(len(raw), "big")
        n = data[-1]
        if not 1 <= n <= BLOCK or data[-n:] != bytes([n]) * n:
            raise CorruptCiphertextError("corrupt ciphertext: bad padding")
        return data[:-n]


def encrypt_name(keys: KeyMaterial, identifier: str) -> str:
    """Deterministic lowercase-hex token for a table or column name."""
    if not identifier:
        raise CryptoError("cannot encrypt an empty identifier")
    return AESSIV(keys.name_key).encrypt(identifier.encode("utf-8"), None).hex()


def decrypt_name(keys: KeyMaterial, token: str) -> str:
    try:
        raw = bytes.fromhex(token)
        return AESSIV(keys.name_key).decrypt(raw, None).decode("utf-8")
    except (ValueError, InvalidTag):
        raise AuthenticationError("name token failed authentication") from None


def seal_blob(keys: KeyMaterial, data: bytes, context: bytes) -> bytes:
    """Authenticated, deterministic encryption of a client-side blob."""
    return AESSIV(keys.name_key).encrypt(data, [context])


def open_blob(keys: KeyMaterial, blob: bytes, context: bytes) -> bytes:
    try:
        return AESSIV(keys.name_key).decrypt(blob, [context])
    except (ValueError, InvalidTag):
        raise AuthenticationError("blob failed authentication (wrong secret?)") from None
