"""Paillier cryptosystem with re-blinding, nesting and a signed fixed-point codec.

Keys use the ``g = N + 1`` variant; decryption precomputes
``mu = lambda^-1 mod N``.  Every randomized call takes an explicit ``rng``
(anything with ``getrandbits``/``randrange``: ``random.Random`` for
reproducible runs, ``random.SystemRandom`` otherwise).
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass

import gmpy2

log = logging.getLogger(__name__)

MIN_KEY_BITS = 128


class PaillierError(Exception):
    pass


class KeyMismatchError(PaillierError):
    """Ciphertext and key do not belong together."""


class CorruptCiphertextError(PaillierError):
    pass


class DomainError(PaillierError, ValueError):
    """Plaintext or encoded value outside the representable range."""


class ConfigurationError(PaillierError):
    pass


class PrimeSearchError(PaillierError):
    """Retryable: the prime search gave up."""


def _key_id(n: int) -> str:
    return hashlib.sha256(format(n, "x").encode()).hexdigest()[:16]


@dataclass(frozen=True)
class PaillierPublicKey:
    n: int
    key_bits: int

    @property
    def g(self) -> int:
        return self.n + 1

    @property
    def nsquare(self) -> int:
        return self.n * self.n

    @property
    def key_id(self) -> str:
        return _key_id(self.n)

    def to_json(self) -> str:
        return json.dumps({"n": format(self.n, "x"), "g": format(self.g, "x"), "key_bits": self.key_bits})

    @classmethod
    def from_json(cls, text: str) -> "PaillierPublicKey":
        obj = json.loads(text)
        n = int(obj["n"], 16)
        if int(obj["g"], 16) != n + 1:
            raise ConfigurationError("only g = n + 1 keys are supported")
        return cls(n, int(obj["key_bits"]))


@dataclass(frozen=True)
class PaillierSecretKey:
    lam: int
    mu: int
    n: int

    @property
    def key_id(self) -> str:
        return _key_id(self.n)

    def to_json(self) -> str:
        return json.dumps({"lambda": format(self.lam, "x"), "mu": format(self.mu, "x"), "n": format(self.n, "x")})

    @classmethod
    def from_json(cls, text: str) -> "PaillierSecretKey":
        obj = json.loads(text)
        return cls(int(obj["lambda"], 16), int(obj["mu"], 16), int(obj["n"], 16))

    def __repr__(self):
        return f"PaillierSecretKey(key_id={self.key_id!r})"


@dataclass(frozen=True)
class Ciphertext:
    value: int
    key_id: str
    layer: int = 1
    # key id of the inner layer for doubly encrypted values
    inner_key_id: str | None = None

    def to_dict(self) -> dict:
        d = {"value": format(self.value, "x"), "key_id": self.key_id, "layer": self.layer}
        if self.inner_key_id is not None:
            d["inner_key_id"] = self.inner_key_id
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Ciphertext":
        return cls(int(d["value"], 16), d["key_id"], int(d["layer"]), d.get("inner_key_id"))


def keypair_from_primes(p: int, q: int) -> tuple[PaillierPublicKey, PaillierSecretKey]:
    """Build a key pair from explicit primes (order-insensitive).

    Rejects ``p == q`` and pairs where the smaller prime divides the larger
    minus one.
    """
    p, q = sorted((int(p), int(q)))
    if p == q:
        raise ConfigurationError("p and q must differ")
    if not (gmpy2.is_prime(p) and gmpy2.is_prime(q)):
        raise ConfigurationError("p and q must be prime")
    if (q - 1) % p == 0:
        raise ConfigurationError(f"{p} divides {q} - 1")
    n = p * q
    lam = math.lcm(p - 1, q - 1)
    mu = pow(lam, -1, n)
    return PaillierPublicKey(n, n.bit_length()), PaillierSecretKey(lam, mu, n)


def _random_prime(bits: int, rng) -> int:
    # top two bits set so the product of two such primes has full length
    candidate = rng.getrandbits(bits) | (3 << (bits - 2)) | 1
    p = int(gmpy2.next_prime(candidate))
    if p.bit_length() != bits:
        raise PrimeSearchError(f"prime search overflowed {bits} bits")
    return p


def keygen(key_bits: int, rng, max_attempts: int = 64) -> tuple[PaillierPublicKey, PaillierSecretKey]:
    """Generate a key pair whose modulus has exactly ``key_bits`` bits."""
    if key_bits < MIN_KEY_BITS:
        raise ConfigurationError(f"key_bits must be >= {MIN_KEY_BITS}")
    if key_bits < 512:
        log.debug("generating a %d-bit test key", key_bits)
    p_bits = key_bits // 2
    q_bits = key_bits - p_bits
    for _ in range(max_attempts):
        try:
            p = _random_prime(p_bits, rng)
            q = _random_prime(q_bits, rng)
        except PrimeSearchError:
            continue
        if p == q or (max(p, q) - 1) % min(p, q) == 0:
            continue
        pk, sk = keypair_from_primes(p, q)
        if pk.key_bits == key_bits:
            return pk, sk
    raise PrimeSearchError(f"no {key_bits}-bit key after {max_attempts} attempts")


def _random_unit(n: int, rng) -> int:
    while True:
        r = rng.randrange(1, n)
        if math.gcd(r, n) == 1:
            return r


def _raw_encrypt(pk: PaillierPublicKey, m: int, r: int) -> int:
    nsq = pk.nsquare
    # (1 + N)^m = 1 + mN mod N^2
    gm = (1 + m * pk.n) % nsq
    return int(gm * gmpy2.powmod(r, pk.n, nsq) % nsq)


def encrypt(pk: PaillierPublicKey, m: int, rng) -> Ciphertext:
    if not 0 <= m < pk.n:
        raise DomainError(f"plaintext must lie in [0, N), got {m}")
    return Ciphertext(_raw_encrypt(pk, m, _random_unit(pk.n, rng)), pk.key_id)


def _check(sk: PaillierSecretKey, c: Ciphertext) -> None:
    if c.key_id != sk.key_id:
        raise KeyMismatchError(f"ciphertext under key {c.key_id}, secret key {sk.key_id}")


def raw_decrypt(sk: PaillierSecretKey, value: int) -> int:
    n = sk.n
    nsq = n * n
    if not 0 < value < nsq or math.gcd(value, n) != 1:
        raise CorruptCiphertextError("ciphertext is not a unit mod N^2")
    u = int(gmpy2.powmod(value, sk.lam, nsq))
    return (u - 1) // n * sk.mu % n


def decrypt(sk: PaillierSecretKey, c: Ciphertext) -> int:
    _check(sk, c)
    return raw_decrypt(sk, c.value)


def _same_space(c1: Ciphertext, c2: Ciphertext) -> None:
    if c1.key_id != c2.key_id or c1.layer != c2.layer:
        raise KeyMismatchError("ciphertexts under different keys or layers")


def hom_add(pk: PaillierPublicKey, c1: Ciphertext, c2: Ciphertext) -> Ciphertext:
    """Ciphertext of ``m1 + m2 (mod N)``."""
    _same_space(c1, c2)
    if c1.key_id != pk.key_id:
        raise KeyMismatchError("public key does not match ciphertexts")
    return Ciphertext(c1.value * c2.value % pk.nsquare, c1.key_id, c1.layer, c1.inner_key_id)


def hom_scalar_mul(pk: PaillierPublicKey, c: Ciphertext, k: int) -> Ciphertext:
    """Ciphertext of ``k * m (mod N)``."""
    if k < 0:
        raise DomainError("scalar must be non-negative")
    if c.key_id != pk.key_id:
        raise KeyMismatchError("public key does not match ciphertext")
    return Ciphertext(int(gmpy2.powmod(c.value, k, pk.nsquare)), c.key_id, c.layer, c.inner_key_id)


def reblind(pk: PaillierPublicKey, c: Ciphertext, rng) -> Ciphertext:
    if c.key_id != pk.key_id:
        raise KeyMismatchError("public key does not match ciphertext")
    nsq = pk.nsquare
    while True:
        factor = int(gmpy2.powmod(_random_unit(pk.n, rng), pk.n, nsq))
        value = c.value * factor % nsq
        if value != c.value:
            return Ciphertext(value, c.key_id, c.layer, c.inner_key_id)


def check_nesting(outer: PaillierPublicKey, inner: PaillierPublicKey) -> None:
    """Outer plaintext space must hold any inner ciphertext."""
    if outer.key_bits < 2 * inner.key_bits + 2 or outer.n <= inner.nsquare:
        raise ConfigurationError(
            f"outer key ({outer.key_bits} bits) too small to wrap a "
            f"{inner.key_bits}-bit inner key; need >= {2 * inner.key_bits + 2} bits"
        )


def wrap(outer_pk: PaillierPublicKey, inner: Ciphertext, rng) -> Ciphertext:
    if inner.layer != 1:
        raise ConfigurationError("only layer-1 ciphertexts can be wrapped")
    if inner.value >= outer_pk.n:
        raise ConfigurationError("inner ciphertext does not fit the outer plaintext space")
    c = encrypt(outer_pk, inner.value, rng)
    return Ciphertext(c.value, outer_pk.key_id, 2, inner.key_id)


def double_encrypt(outer_pk: PaillierPublicKey, inner_pk: PaillierPublicKey, m: int, rng) -> Ciphertext:
    check_nesting(outer_pk, inner_pk)
    return wrap(outer_pk, encrypt(inner_pk, m, rng), rng)


def strip_layer(outer_sk: PaillierSecretKey, c: Ciphertext, inner_pk: PaillierPublicKey | None = None) -> Ciphertext:
    """Remove the outer layer, returning the inner ciphertext.

    With ``inner_pk`` the recovered value is range-checked against the inner
    ciphertext space; a value outside it means the wrong key or a malformed
    aggregate.
    """
    if c.layer != 2:
        raise KeyMismatchError("strip_layer needs a layer-2 ciphertext")
    value = decrypt(outer_sk, c)
    if inner_pk is not None:
        if c.inner_key_id is not None and c.inner_key_id != inner_pk.key_id:
            raise KeyMismatchError("inner key does not match ciphertext")
        if not 0 < value < inner_pk.nsquare or math.gcd(value, inner_pk.n) != 1:
            raise CorruptCiphertextError("stripped value is not an inner ciphertext")
    return Ciphertext(value, c.inner_key_id or "", 1)


@dataclass(frozen=True)
class FixedPointCodec:
    n: int
    scale: int = 10**6

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    @classmethod
    def for_key(cls, pk: PaillierPublicKey, scale: int = 10**6) -> "FixedPointCodec":
        return cls(pk.n, scale)

    @property
    def max_int(self) -> int:
        # largest magnitude still decoded unambiguously
        return (self.n - 1) // 2

    def encode_int(self, v: int) -> int:
        if abs(v) > self.max_int:
            raise DomainError(f"|{v}| exceeds the signed range of the modulus")
        return v % self.n

    def decode_int(self, v: int) -> int:
        if not 0 <= v < self.n:
            raise DomainError("encoded value outside [0, N)")
        return v - self.n if v > self.n // 2 else v

    def quantize(self, x: float) -> int:
        return round(x * self.scale)

    def encode(self, x: float) -> int:
        if not math.isfinite(x):
            raise DomainError("cannot encode a non-finite value")
        return self.encode_int(self.quantize(x))

    def decode(self, v: int) -> float:
        return self.decode_int(v) / self.scale

    def decode_bounded(self, v: int, bound: float, divisor: int = 1) -> float:
        """Decode ``v / divisor`` and reject magnitudes above ``bound``.

        Decrypting under a wrong key lands anywhere in ``[0, N)``; a plausible
        value bound catches that with overwhelming probability.
        """
        x = self.decode_int(v) / (self.scale * divisor)
        if not abs(x) <= bound:
            raise DomainError(f"decoded value {x:.3e} outside plausible range +/-{bound:g}")
        return x


def fp_encode(codec: FixedPointCodec, x: float) -> int:
    return codec.encode(x)


def fp_decode(codec: FixedPointCodec, v: int) -> float:
    return codec.decode(v)
