"""Paillier additive-homomorphic encryption and the fixed-point codec for signed reals.

Keys use the g = n + 1 variant, so g^m mod n^2 collapses to 1 + m*n and the
decryption constant mu is simply lambda^-1 mod n.
"""
import hashlib
import math
import random
from dataclasses import dataclass, field

import sympy

from common.errors import CodecOverflowError, KeyGenerationError, KeyMismatchError, PlaintextRangeError

DEFAULT_KEY_BITS = 512
FRACTION_BITS = 40
MAX_PARTIES = 64
KEYGEN_ATTEMPTS = 64
LENGTH_PREFIX = 4


def int_to_bytes(value):
    """Big-endian magnitude with a 4-byte length prefix"""
    body = value.to_bytes(max(1, (value.bit_length() + 7) // 8), "big")
    return len(body).to_bytes(LENGTH_PREFIX, "big") + body


def int_from_bytes(buffer, offset=0):
    """Inverse of int_to_bytes; returns (value, next offset)"""
    length = int.from_bytes(buffer[offset : offset + LENGTH_PREFIX], "big")
    start = offset + LENGTH_PREFIX
    return int.from_bytes(buffer[start : start + length], "big"), start + length


def read_integers(buffer):
    """All length-prefixed integers in ``buffer``"""
    values, offset = [], 0
    while offset < len(buffer):
        value, offset = int_from_bytes(buffer, offset)
        values.append(value)
    return values


@dataclass(frozen=True)
class PaillierPublicKey:
    n: int
    nsquare: int = field(init=False, repr=False)
    fingerprint: str = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "nsquare", self.n * self.n)
        object.__setattr__(self, "fingerprint", hashlib.sha256(int_to_bytes(self.n)).hexdigest()[:16])

    @property
    def g(self):
        return self.n + 1

    def to_bytes(self):
        return int_to_bytes(self.n)

    @classmethod
    def from_bytes(cls, buffer):
        n, _ = int_from_bytes(buffer)
        return cls(n)


@dataclass(frozen=True)
class PaillierKeypair:
    public_key: PaillierPublicKey
    p: int = field(repr=False)
    q: int = field(repr=False)
    lam: int = field(repr=False)
    mu: int = field(repr=False)

    @property
    def fingerprint(self):
        return self.public_key.fingerprint


@dataclass(frozen=True)
class Ciphertext:
    value: int
    public_key: PaillierPublicKey = field(repr=False)

    @property
    def fingerprint(self):
        return self.public_key.fingerprint

    def to_bytes(self):
        return int_to_bytes(self.value)

    @property
    def nbytes(self):
        return LENGTH_PREFIX + max(1, (self.value.bit_length() + 7) // 8)

    @classmethod
    def read_all(cls, buffer, public_key):
        return [cls(value=v, public_key=public_key) for v in read_integers(buffer)]


def _prime(bits, rng):
    """Prime with exactly ``bits`` bits and the top two bits set"""
    for _ in range(KEYGEN_ATTEMPTS):
        candidate = rng.getrandbits(bits) | (3 << (bits - 2)) | 1
        prime = int(sympy.nextprime(candidate))
        if prime.bit_length() == bits:
            return prime
    raise KeyGenerationError(f"No {bits}-bit prime found in {KEYGEN_ATTEMPTS} attempts")


def keygen(bits=DEFAULT_KEY_BITS, seed=None):
    """Generate a keypair with an n of exactly ``bits`` bits; deterministic when ``seed`` is given"""
    if bits < 16 or bits % 2:
        raise KeyGenerationError(f"Key size must be an even number of bits >= 16, got {bits}")
    rng = random.Random(seed) if seed is not None else random.SystemRandom()
    half = bits // 2
    for _ in range(KEYGEN_ATTEMPTS):
        p = _prime(half, rng)
        q = _prime(half, rng)
        n = p * q
        if p == q or n.bit_length() != bits or math.gcd(n, (p - 1) * (q - 1)) != 1:
            continue
        lam = math.lcm(p - 1, q - 1)
        return PaillierKeypair(public_key=PaillierPublicKey(n), p=p, q=q, lam=lam, mu=pow(lam, -1, n))
    raise KeyGenerationError(f"Could not generate a valid {bits}-bit key in {KEYGEN_ATTEMPTS} attempts")


def _obfuscator(public_key, rng):
    while True:
        r = rng.randrange(1, public_key.n)
        if math.gcd(r, public_key.n) == 1:
            return pow(r, public_key.n, public_key.nsquare)


def encrypt(plaintext, public_key, rng=None):
    """c = g^m * r^n mod n^2 with r uniform in (0, n) and coprime to n"""
    if not isinstance(plaintext, int) or not 0 <= plaintext < public_key.n:
        raise PlaintextRangeError(f"Plaintext must be an integer in [0, n); got {plaintext!r}")
    rng = rng or random.SystemRandom()
    nude = (1 + plaintext * public_key.n) % public_key.nsquare
    return Ciphertext(value=nude * _obfuscator(public_key, rng) % public_key.nsquare, public_key=public_key)


def decrypt(ciphertext, keypair):
    if ciphertext.fingerprint != keypair.fingerprint:
        raise KeyMismatchError(
            f"Ciphertext under key {ciphertext.fingerprint} cannot be decrypted with key {keypair.fingerprint}"
        )
    n = keypair.public_key.n
    x = pow(ciphertext.value, keypair.lam, keypair.public_key.nsquare)
    return (x - 1) // n * keypair.mu % n


def add_ciphertexts(ciphertexts):
    """Homomorphic sum: the product of the ciphertexts modulo n^2"""
    ciphertexts = list(ciphertexts)
    if not ciphertexts:
        raise ValueError("Cannot add an empty list of ciphertexts")
    public_key = ciphertexts[0].public_key
    total = 1
    for ciphertext in ciphertexts:
        if ciphertext.fingerprint != public_key.fingerprint:
            raise KeyMismatchError(
                f"Ciphertexts under keys {public_key.fingerprint} and {ciphertext.fingerprint} cannot be added"
            )
        total = total * ciphertext.value % public_key.nsquare
    return Ciphertext(value=total, public_key=public_key)


@dataclass(frozen=True)
class FixedPointCodec:
    """Signed reals as integers mod n, scaled by 2^fraction_bits.

    Any single encoded magnitude stays below n / (2 * max_parties), so sums of
    up to ``max_parties`` addends never wrap past n / 2.
    """

    n: int
    fraction_bits: int = FRACTION_BITS
    max_parties: int = MAX_PARTIES

    @property
    def scale(self):
        return 1 << self.fraction_bits

    @property
    def max_encoded(self):
        return self.n // (2 * self.max_parties)

    def to_fixed(self, x):
        """Signed scaled integer of ``x`` before the modular mapping"""
        value = round(float(x) * self.scale)
        if abs(value) > self.max_encoded:
            raise CodecOverflowError(f"{x!r} exceeds the codec range of {self.max_encoded / self.scale:.3e}")
        return value

    def encode(self, x):
        return self.to_fixed(x) % self.n

    def to_signed(self, value, addends=1):
        if value > self.n // 2:
            value -= self.n
        if addends > self.max_parties or abs(value) > self.max_encoded * addends:
            raise CodecOverflowError(f"Decoded sum of {addends} addends is outside the overflow budget")
        return value

    def decode(self, value, addends=1):
        return self.to_signed(value, addends) / self.scale

    def random_mask(self, rng):
        """Uniform signed integer over the full encodable range"""
        return rng.randint(-self.max_encoded, self.max_encoded)
