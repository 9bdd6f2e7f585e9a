"""Key derivation and the cryptographic primitives used across the pipeline.

Two authenticated-encryption modes are exposed: a deterministic one
(AES-SIV) for index keys and filter-matchable columns, and a randomized one
(AES-GCM with a fresh nonce) for metadata blobs and padding-row filler.
Alongside them live the unkeyed public cell hash and the order-sensitive
chain digests used for integrity tags.

This is the only module that touches key material.  All operations are pure
given their inputs and safe for concurrent use.
"""

from __future__ import annotations

import hashlib
import hmac
import os
from dataclasses import dataclass
from functools import lru_cache

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM, AESSIV

from .errors import AuthenticationFailure

# Field separator for encoded plaintexts.  Location/observation identifiers
# must not contain this byte (validated at ingestion).
SEP = b"\xff"

# Padded plaintext widths, fixed project-wide so the data provider and the
# query processor produce byte-identical ciphertexts.
FIELD_WIDTH = 64
RECORD_WIDTH = 192

# Reserved values for the id slot of index keys.  Real cell-ids start at 1.
FAKE_MARKER = 0
DUMMY_MARKER = 2**64 - 1

DIGEST_LEN = 32
_SIV_OVERHEAD = 16
_GCM_NONCE = 12
_GCM_OVERHEAD = _GCM_NONCE + 16

KEY_LEN = 32


@dataclass(frozen=True)
class MasterSecret:
    """Long-lived shared secret; only derived keys ever leave this module."""

    bytes: bytes

    def __post_init__(self):
        if len(self.bytes) != KEY_LEN:
            raise ValueError(f"master secret must be {KEY_LEN} bytes")

    @classmethod
    def generate(cls) -> "MasterSecret":
        return cls(os.urandom(KEY_LEN))

    @classmethod
    def from_file(cls, path) -> "MasterSecret":
        data = open(path, "rb").read().strip()
        if len(data) == 2 * KEY_LEN:
            try:
                data = bytes.fromhex(data.decode("ascii"))
            except (UnicodeDecodeError, ValueError):
                pass
        return cls(data)


@dataclass(frozen=True)
class EpochKey:
    """Per-epoch key; ``rewrite_counter`` advances when rows are rewritten."""

    bytes: bytes
    eid: int
    rewrite_counter: int = 0


def encode_u64(value: int) -> bytes:
    return value.to_bytes(8, "big")


def decode_u64(data: bytes) -> int:
    return int.from_bytes(data, "big")


def encode_ids(a: int, b: int) -> bytes:
    """Fixed-width encoding of an id pair, collision-free under concatenation."""
    return encode_u64(a) + SEP + encode_u64(b)


def decode_ids(data: bytes) -> tuple[int, int]:
    if len(data) != 17 or data[8:9] != SEP:
        raise ValueError("malformed id pair")
    return decode_u64(data[:8]), decode_u64(data[9:])


def derive_epoch_key(master: MasterSecret, eid: int, rewrite_counter: int = 0) -> EpochKey:
    """PRF the master secret with (epoch id, rewrite counter).

    Counter 0 is the ingestion key; each rewrite of an epoch's rows advances
    the counter, so old trapdoors stop matching rewritten rows.
    """
    if rewrite_counter < 0:
        raise ValueError("rewrite counter must be nonnegative")
    material = encode_ids(eid, rewrite_counter)
    raw = hmac.new(master.bytes, b"epoch-key" + SEP + material, hashlib.sha256).digest()
    return EpochKey(bytes=raw, eid=eid, rewrite_counter=rewrite_counter)


def derive_registry_key(master: MasterSecret) -> EpochKey:
    raw = hmac.new(master.bytes, b"user-registry", hashlib.sha256).digest()
    return EpochKey(bytes=raw, eid=0, rewrite_counter=0)


# Cipher objects are cached per key so bulk encryption does not redo the key
# schedule on every call.
@lru_cache(maxsize=512)
def _det_cipher(key_bytes: bytes) -> AESSIV:
    return AESSIV(hmac.new(key_bytes, b"det", hashlib.sha256).digest())


@lru_cache(maxsize=512)
def _rnd_cipher(key_bytes: bytes) -> AESGCM:
    return AESGCM(hmac.new(key_bytes, b"rnd", hashlib.sha256).digest())


def pad_block(data: bytes, width: int = FIELD_WIDTH) -> bytes:
    """Length-prefix and zero-pad to a fixed width so ciphertext length
    leaks nothing about the value length."""
    if len(data) > width - 2:
        raise ValueError(f"value of {len(data)} bytes exceeds padded width {width}")
    return len(data).to_bytes(2, "big") + data + b"\x00" * (width - 2 - len(data))


def unpad_block(block: bytes) -> bytes:
    n = int.from_bytes(block[:2], "big")
    if n > len(block) - 2:
        raise ValueError("corrupt padded block")
    return block[2:2 + n]


def det_encrypt(key: EpochKey, plaintext: bytes) -> bytes:
    """Deterministic AEAD: identical (key, plaintext) gives identical bytes."""
    if not plaintext:
        raise ValueError("plaintext must be nonempty")
    return _det_cipher(key.bytes).encrypt(plaintext, None)


def det_decrypt(key: EpochKey, ciphertext: bytes) -> bytes:
    try:
        return _det_cipher(key.bytes).decrypt(ciphertext, None)
    except InvalidTag as exc:
        raise AuthenticationFailure("deterministic ciphertext rejected") from exc


def rnd_encrypt(key: EpochKey, plaintext: bytes) -> bytes:
    """Randomized AEAD: equal plaintexts encrypt to different bytes."""
    if not plaintext:
        raise ValueError("plaintext must be nonempty")
    nonce = os.urandom(_GCM_NONCE)
    return nonce + _rnd_cipher(key.bytes).encrypt(nonce, plaintext, None)


def rnd_decrypt(key: EpochKey, ciphertext: bytes) -> bytes:
    if len(ciphertext) < _GCM_OVERHEAD:
        raise AuthenticationFailure("randomized ciphertext too short")
    try:
        return _rnd_cipher(key.bytes).decrypt(
            ciphertext[:_GCM_NONCE], ciphertext[_GCM_NONCE:], None
        )
    except InvalidTag as exc:
        raise AuthenticationFailure("randomized ciphertext rejected") from exc


def det_ct_len(plaintext_len: int) -> int:
    return plaintext_len + _SIV_OVERHEAD


def rnd_filler_len(det_plaintext_len: int) -> int:
    """Filler length that makes a randomized ciphertext byte-for-byte as long
    as a deterministic ciphertext of the given padded width."""
    n = det_ct_len(det_plaintext_len) - _GCM_OVERHEAD
    if n < 1:
        raise ValueError("padded width too small to length-match filler")
    return n


def grid_hash(value: bytes, modulus: int) -> int:
    """Unkeyed public hash reduced into [0, modulus); both sides of the
    pipeline must agree on it bit-exactly."""
    if modulus < 1:
        raise ValueError("modulus must be positive")
    return int.from_bytes(hashlib.sha256(value).digest(), "big") % modulus


def chain_extend(prev: bytes, ciphertext: bytes) -> bytes:
    """One link of the order-sensitive digest chain; ``prev`` is empty for
    the first link."""
    return hashlib.sha256(ciphertext + prev).digest()


def chain_digest(ciphertexts) -> bytes:
    """Fold a ciphertext sequence into a single chain digest.

    The empty sequence is defined as the digest of the empty string.
    """
    prev = b""
    seen = False
    for ct in ciphertexts:
        prev = chain_extend(prev, ct)
        seen = True
    if not seen:
        return hashlib.sha256(b"").digest()
    return prev
