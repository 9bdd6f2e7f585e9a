import hashlib
import os
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from concealer.crypto import (
    MasterSecret,
    chain_digest,
    chain_extend,
    derive_epoch_key,
    det_decrypt,
    det_encrypt,
    det_ct_len,
    grid_hash,
    pad_block,
    rnd_decrypt,
    rnd_encrypt,
    rnd_filler_len,
    unpad_block,
)
from concealer.errors import AuthenticationFailure

MASTER = MasterSecret(bytes(range(32)))
KEY = derive_epoch_key(MASTER, 100, 0)
OTHER = derive_epoch_key(MASTER, 101, 0)


class TestKeyDerivation:
    def test_deterministic(self):
        a = derive_epoch_key(MASTER, 100, 0)
        b = derive_epoch_key(MASTER, 100, 0)
        assert a.bytes == b.bytes

    def test_distinct_epochs(self):
        assert derive_epoch_key(MASTER, 100, 0).bytes != derive_epoch_key(MASTER, 101, 0).bytes

    def test_distinct_rewrite_counters(self):
        assert derive_epoch_key(MASTER, 100, 0).bytes != derive_epoch_key(MASTER, 100, 1).bytes

    def test_key_separation_grid(self):
        # 10 epochs x 5 rewrite counters -> 50 pairwise distinct keys.
        keys = [derive_epoch_key(MASTER, e, c).bytes for e in range(10) for c in range(5)]
        assert len(set(keys)) == 50

    def test_negative_counter_rejected(self):
        with pytest.raises(ValueError):
            derive_epoch_key(MASTER, 1, -1)


class TestDeterministicMode:
    def test_same_plaintext_same_bytes(self):
        assert det_encrypt(KEY, b"l1|t1") == det_encrypt(KEY, b"l1|t1")

    def test_roundtrip_many(self):
        rng = random.Random(1)
        for _ in range(1000):
            pt = rng.randbytes(rng.randint(1, 80))
            assert det_decrypt(KEY, det_encrypt(KEY, pt)) == pt

    def test_wrong_key_rejected(self):
        ct = det_encrypt(KEY, b"payload")
        with pytest.raises(AuthenticationFailure):
            det_decrypt(OTHER, ct)

    def test_every_bitflip_detected(self):
        ct = bytearray(det_encrypt(KEY, b"payload"))
        for bit in range(len(ct) * 8):
            ct[bit // 8] ^= 1 << (bit % 8)
            with pytest.raises(AuthenticationFailure):
                det_decrypt(KEY, bytes(ct))
            ct[bit // 8] ^= 1 << (bit % 8)

    def test_empty_plaintext_rejected(self):
        with pytest.raises(ValueError):
            det_encrypt(KEY, b"")

    def test_length_is_function_of_plaintext_length(self):
        for n in (1, 7, 64, 200):
            lens = {len(det_encrypt(KEY, bytes([i]) * n)) for i in range(5)}
            assert lens == {det_ct_len(n)}

    def test_cross_epoch_unlinkability(self):
        # Same value under different epoch keys never collides.
        rng = random.Random(2)
        for _ in range(200):
            v = rng.randbytes(16)
            assert det_encrypt(KEY, v) != det_encrypt(OTHER, v)


class TestRandomizedMode:
    def test_two_encryptions_differ(self):
        assert rnd_encrypt(KEY, b"v") != rnd_encrypt(KEY, b"v")

    def test_roundtrip(self):
        rng = random.Random(3)
        for _ in range(300):
            pt = rng.randbytes(rng.randint(1, 64))
            assert rnd_decrypt(KEY, rnd_encrypt(KEY, pt)) == pt

    def test_tamper_detected(self):
        ct = bytearray(rnd_encrypt(KEY, b"v" * 20))
        ct[15] ^= 0x01
        with pytest.raises(AuthenticationFailure):
            rnd_decrypt(KEY, bytes(ct))

    def test_filler_len_matches_det_length(self):
        for width in (16, 64, 192):
            filler = os.urandom(rnd_filler_len(width))
            assert len(rnd_encrypt(KEY, filler)) == det_ct_len(width)


@settings(max_examples=200)
@given(pt=st.binary(min_size=1, max_size=100))
def test_modes_roundtrip_property(pt):
    assert det_decrypt(KEY, det_encrypt(KEY, pt)) == pt
    assert rnd_decrypt(KEY, rnd_encrypt(KEY, pt)) == pt


@settings(max_examples=200)
@given(data=st.binary(min_size=0, max_size=62))
def test_pad_roundtrip(data):
    block = pad_block(data, 64)
    assert len(block) == 64
    assert unpad_block(block) == data


def test_pad_overflow_rejected():
    with pytest.raises(ValueError):
        pad_block(b"x" * 63, 64)


class TestGridHash:
    def test_modulus_one(self):
        for v in (b"", b"a", b"abc" * 10):
            assert grid_hash(v, 1) == 0

    def test_deterministic(self):
        assert grid_hash(b"l1", 16) == grid_hash(b"l1", 16)

    def test_uniformity_chi_squared(self):
        # 1e5 random values into 16 buckets; chi^2 must stay below the
        # p=0.001 critical value for 15 degrees of freedom (37.697).
        rng = random.Random(4)
        buckets = [0] * 16
        n = 100_000
        for _ in range(n):
            buckets[grid_hash(rng.randbytes(12), 16)] += 1
        expected = n / 16
        chi2 = sum((b - expected) ** 2 / expected for b in buckets)
        assert chi2 < 37.697, f"chi2={chi2}"

    def test_bad_modulus(self):
        with pytest.raises(ValueError):
            grid_hash(b"v", 0)


class TestChains:
    def test_order_sensitive(self):
        c1, c2 = b"aaaa", b"bbbb"
        assert chain_digest([c1, c2]) != chain_digest([c2, c1])

    def test_empty_chain_is_empty_digest(self):
        assert chain_digest([]) == hashlib.sha256(b"").digest()

    def test_single_link(self):
        ct = b"cipher"
        assert chain_digest([ct]) == chain_extend(b"", ct)

    def test_matches_independent_reference(self):
        # Reference: explicit sha256 fold, written without chain_extend.
        rng = random.Random(5)
        cts = [rng.randbytes(24) for _ in range(9)]
        ref = b""
        for ct in cts:
            ref = hashlib.sha256(ct + ref).digest()
        assert chain_digest(cts) == ref


def test_master_secret_file_roundtrip(tmp_path):
    m = MasterSecret.generate()
    raw = tmp_path / "k.raw"
    raw.write_bytes(m.bytes)
    assert MasterSecret.from_file(raw).bytes == m.bytes
    hexed = tmp_path / "k.hex"
    hexed.write_text(m.bytes.hex())
    assert MasterSecret.from_file(hexed).bytes == m.bytes
