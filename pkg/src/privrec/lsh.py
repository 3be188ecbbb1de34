"""MinHash signatures and bit sketches for hashed item identities."""

from __future__ import annotations

import hashlib
import logging
import random
from collections import Counter
from dataclasses import dataclass
from functools import cached_property

from .dataset import ItemMeta

log = logging.getLogger(__name__)

_PRIME = (1 << 61) - 1


class SchemeMismatchError(ValueError):
    pass


def _h64(token: str) -> int:
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "big")


@dataclass(frozen=True)
class LshScheme:
    seed: int = 0
    num_perm: int = 64
    bands: int = 16
    sketch_bits: int = 64

    def __post_init__(self):
        if self.num_perm < 16:
            raise ValueError("signature length must be >= 16")
        if self.num_perm % self.bands:
            raise ValueError("num_perm must be a multiple of bands")

    @property
    def scheme_id(self) -> str:
        return f"mh{self.seed}-{self.num_perm}-{self.bands}-{self.sketch_bits}"

    @cached_property
    def _coeffs(self) -> list[tuple[int, int]]:
        rng = random.Random(f"lsh:{self.seed}")
        return [(rng.randrange(1, _PRIME), rng.randrange(0, _PRIME)) for _ in range(self.num_perm)]


@dataclass(frozen=True)
class LshSignature:
    minhash: tuple[int, ...]
    bands: tuple[int, ...]
    bit_sketch: int
    scheme_id: str
    fallback: bool = False

    def key(self) -> str:
        return self.to_hex()

    def to_hex(self) -> str:
        body = "".join(format(b, "016x") for b in self.bands) + format(self.bit_sketch, "016x")
        return f"{self.scheme_id}:{body}"

    def __lt__(self, other: "LshSignature") -> bool:
        return self.to_hex() < other.to_hex()


def shingles(text: str, k: int = 3) -> set[str]:
    if len(text) <= k:
        return {text}
    return {text[i:i + k] for i in range(len(text) - k + 1)}


def item_tokens(item: ItemMeta) -> tuple[set[str], bool]:
    """Token set hashed for an item and whether the id-only fallback applied."""
    tokens = {f"id|{s}" for s in shingles(item.item_id)}
    if not item.features:
        return tokens, True
    for feature in item.features:
        tokens |= {f"f|{s}" for s in shingles(feature)}
    return tokens, False


def minhash(tokens, scheme: LshScheme) -> tuple[int, ...]:
    xs = [_h64(t) for t in tokens]
    if not xs:
        raise ValueError("cannot minhash an empty token set")
    return tuple(min((a * x + b) % _PRIME for x in xs) for a, b in scheme._coeffs)


def signature_from_tokens(tokens, scheme: LshScheme, fallback: bool = False) -> LshSignature:
    mh = minhash(tokens, scheme)
    rows = scheme.num_perm // scheme.bands
    bands = tuple(
        _h64("|".join(map(str, mh[i * rows:(i + 1) * rows])))
        for i in range(scheme.bands)
    )
    # b-bit minhash: bit i is a low-order bit of one permutation's minimum
    sketch = 0
    for i in range(scheme.sketch_bits):
        bit = (mh[i % scheme.num_perm] >> (i // scheme.num_perm)) & 1
        sketch |= bit << i
    return LshSignature(mh, bands, sketch, scheme.scheme_id, fallback)


def hash_item(item: ItemMeta, scheme: LshScheme) -> LshSignature:
    tokens, fallback = item_tokens(item)
    if fallback:
        log.debug("item %s has no features; hashing its id only", item.item_id)
    return signature_from_tokens(tokens, scheme, fallback)


def _same_scheme(a: LshSignature, b: LshSignature) -> None:
    if a.scheme_id != b.scheme_id:
        raise SchemeMismatchError(f"{a.scheme_id} vs {b.scheme_id}")


def hamming_similarity(a: int, b: int, width: int) -> float:
    return 1.0 - bin((a ^ b) & ((1 << width) - 1)).count("1") / width


def dice(a, b) -> float:
    ca, cb = Counter(a), Counter(b)
    total = sum(ca.values()) + sum(cb.values())
    if total == 0:
        return 1.0
    return 2.0 * sum((ca & cb).values()) / total


def similarity(a: LshSignature, b: LshSignature, metric: str = "hamming") -> float:
    _same_scheme(a, b)
    if a == b:
        return 1.0
    if metric == "hamming":
        width = int(a.scheme_id.rsplit("-", 1)[1])
        return hamming_similarity(a.bit_sketch, b.bit_sketch, width)
    if metric == "dice":
        return dice(a.bands, b.bands)
    raise ValueError(f"unknown metric {metric!r}")


def match_items(query, local, threshold: float, metric: str = "hamming") -> list[tuple[int, int]]:
    """Index pairs ``(i, j)`` with ``similarity(query[i], local[j]) >= threshold``."""
    pairs = []
    for i, a in enumerate(query):
        for j, b in enumerate(local):
            _same_scheme(a, b)
            if a == b or similarity(a, b, metric) >= threshold:
                pairs.append((i, j))
    return pairs


def exact_index(signatures) -> dict[str, int]:
    """Map from signature key to position; used for identity matching."""
    index = {}
    for i, s in enumerate(signatures):
        index.setdefault(s.key(), i)
    return index
