import random

import pytest

from common.errors import CodecOverflowError, KeyGenerationError, KeyMismatchError, PlaintextRangeError
from protocols.paillier import (
    Ciphertext,
    FixedPointCodec,
    PaillierPublicKey,
    add_ciphertexts,
    decrypt,
    encrypt,
    int_from_bytes,
    int_to_bytes,
    keygen,
)


@pytest.fixture(scope="module")
def keypair():
    return keygen(128, seed=11)


class TestKeys:
    def test_modulus_has_requested_bits(self, keypair):
        assert keypair.public_key.n.bit_length() == 128
        assert keypair.p * keypair.q == keypair.public_key.n

    def test_seeded_keys_are_reproducible(self, keypair):
        assert keygen(128, seed=11).public_key.n == keypair.public_key.n

    def test_odd_key_size_rejected(self):
        with pytest.raises(KeyGenerationError):
            keygen(127, seed=1)

    def test_public_key_bytes(self, keypair):
        restored = PaillierPublicKey.from_bytes(keypair.public_key.to_bytes())
        assert restored.fingerprint == keypair.fingerprint


class TestEncryption:
    def test_decrypt_recovers_plaintext(self, keypair):
        rng = random.Random(0)
        for plaintext in (0, 1, 12345, keypair.public_key.n - 1):
            assert decrypt(encrypt(plaintext, keypair.public_key, rng), keypair) == plaintext

    def test_encryption_is_randomized(self, keypair):
        rng = random.Random(0)
        assert encrypt(7, keypair.public_key, rng).value != encrypt(7, keypair.public_key, rng).value

    def test_homomorphic_addition(self, keypair):
        rng = random.Random(1)
        ciphertexts = [encrypt(v, keypair.public_key, rng) for v in (10, 20, 30)]
        assert decrypt(add_ciphertexts(ciphertexts), keypair) == 60

    def test_plaintext_out_of_range(self, keypair):
        with pytest.raises(PlaintextRangeError):
            encrypt(keypair.public_key.n, keypair.public_key)
        with pytest.raises(PlaintextRangeError):
            encrypt(-1, keypair.public_key)

    def test_foreign_key_rejected(self, keypair):
        other = keygen(128, seed=12)
        ciphertext = encrypt(5, other.public_key, random.Random(0))
        with pytest.raises(KeyMismatchError):
            decrypt(ciphertext, keypair)
        with pytest.raises(KeyMismatchError):
            add_ciphertexts([ciphertext, encrypt(5, keypair.public_key, random.Random(0))])

    def test_ciphertext_bytes(self, keypair):
        ciphertexts = [encrypt(v, keypair.public_key, random.Random(v)) for v in (1, 2)]
        buffer = b"".join(c.to_bytes() for c in ciphertexts)
        restored = Ciphertext.read_all(buffer, keypair.public_key)
        assert [c.value for c in restored] == [c.value for c in ciphertexts]
        assert len(buffer) == sum(c.nbytes for c in ciphertexts)

    def test_length_prefixed_integers(self):
        value, offset = int_from_bytes(int_to_bytes(2 ** 70 + 3) + b"tail")
        assert value == 2 ** 70 + 3
        assert offset == 4 + 9


class TestFixedPointCodec:
    def test_signed_values_decode(self, keypair):
        codec = FixedPointCodec(keypair.public_key.n)
        for x in (0.0, 1.5, -3.25, -1e-9):
            assert codec.decode(codec.encode(x)) == pytest.approx(x, abs=2 ** -40)

    def test_encrypted_signed_sum(self, keypair):
        codec = FixedPointCodec(keypair.public_key.n)
        rng = random.Random(3)
        values = [0.75, -2.5, 1.125]
        total = add_ciphertexts([encrypt(codec.encode(x), keypair.public_key, rng) for x in values])
        assert codec.decode(decrypt(total, keypair), addends=3) == pytest.approx(sum(values))

    def test_overflow_rejected(self):
        codec = FixedPointCodec(n=2 ** 64, fraction_bits=40, max_parties=64)
        with pytest.raises(CodecOverflowError):
            codec.encode(1e6)

    def test_too_many_addends(self, keypair):
        codec = FixedPointCodec(keypair.public_key.n, max_parties=4)
        with pytest.raises(CodecOverflowError):
            codec.decode(codec.encode(1.0), addends=5)
