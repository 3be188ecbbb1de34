"""Secure recommendation protocol simulated over an in-process message bus.

Roles: a target user asking for predictions, participants holding ratings,
super-peers elected per group, a mediator holding the outer key, a private
recommender service (PRS) aggregating ciphertexts, and a reputation
registry.  Every message goes through :class:`MessageBus` and is logged once
to the transcript, which :func:`audit_transcript` checks for leaks.

Aggregation route ``corrected`` (default): the mediator strips the outer
layer of every share before the PRS combines inner ciphertexts, so the
weighted sum is computed in the inner plaintext space.  Route
``paper-literal`` combines the doubly encrypted values directly; the
outer-layer product adds inner *ciphertexts*, so the target decrypts
garbage.  It exists to demonstrate that.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import paillier
from .cta import ObfuscationPlan, obfuscate_profile
from .dataset import ItemMeta, RatingMatrix, default_catalog
from .lsh import LshScheme, LshSignature, hash_item
from .paillier import Ciphertext, FixedPointCodec, PaillierPublicKey
from .trust import DEFAULT_STATES, InsufficientOverlapError, trust_or_convention

log = logging.getLogger(__name__)

ROUTES = ("corrected", "paper-literal")

KINDS = (
    "RecommendationRequest",
    "TrustReport",
    "ObfuscatedShare",
    "ItemSummary",
    "KeyAnnounce",
    "EncryptedAggregate",
    "ReferralList",
    "ReputationReport",
)

MEDIATOR = "mediator"
PRS = "prs"
SAC = "sac"


class ProtocolError(RuntimeError):
    pass


class SetupError(ProtocolError):
    pass


class DecodeError(ProtocolError):
    pass


# ---------------------------------------------------------------------------
# messages and transcript


def to_wire(obj):
    """Canonical JSON-ready form of a payload."""
    if isinstance(obj, Ciphertext):
        return {"ct": format(obj.value, "x"), "key_id": obj.key_id, "layer": obj.layer,
                "inner_key_id": obj.inner_key_id}
    if isinstance(obj, LshSignature):
        return obj.to_hex()
    if isinstance(obj, PaillierPublicKey):
        return {"n": format(obj.n, "x"), "g": format(obj.g, "x"), "key_bits": obj.key_bits}
    if isinstance(obj, dict):
        return {str(k): to_wire(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_wire(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def canonical(payload) -> str:
    return json.dumps(to_wire(payload), sort_keys=True, separators=(",", ":"))


@dataclass
class Message:
    seq: int
    kind: str
    sender: str
    receiver: str
    payload: dict

    def wire(self) -> str:
        return canonical(self.payload)

    def record(self, audit: bool = True) -> dict:
        body = self.wire()
        rec = {
            "seq": self.seq,
            "kind": self.kind,
            "sender": self.sender,
            "receiver": self.receiver,
            "digest": hashlib.sha256(body.encode()).hexdigest(),
        }
        if audit:
            rec["payload_hex"] = body.encode().hex()
        return rec


@dataclass
class ProtocolTranscript:
    messages: list[Message] = field(default_factory=list)

    def to_jsonl(self, audit: bool = True) -> str:
        return "".join(json.dumps(m.record(audit), sort_keys=True) + "\n" for m in self.messages)

    def of_kind(self, kind: str) -> list[Message]:
        return [m for m in self.messages if m.kind == kind]

    def received_by(self, name: str) -> list[Message]:
        return [m for m in self.messages if m.receiver == name]


class MessageBus:
    """Sequence-numbered FIFO delivery; every send lands in the transcript."""

    def __init__(self):
        self.transcript = ProtocolTranscript()
        self._inbox: dict[str, list[Message]] = defaultdict(list)

    def send(self, kind: str, sender: str, receiver: str, payload: dict) -> Message:
        if kind not in KINDS:
            raise ProtocolError(f"unknown message kind {kind!r}")
        msg = Message(len(self.transcript.messages), kind, sender, receiver, payload)
        self.transcript.messages.append(msg)
        self._inbox[receiver].append(msg)
        return msg

    def drain(self, receiver: str, kind: str | None = None) -> list[Message]:
        box = self._inbox[receiver]
        taken = [m for m in box if kind is None or m.kind == kind]
        self._inbox[receiver] = [m for m in box if not (kind is None or m.kind == kind)]
        return taken


# ---------------------------------------------------------------------------
# roles


@dataclass
class ReputationRegistry:
    scores: dict[str, float] = field(default_factory=dict)

    def reputation(self, peer: str) -> float:
        return self.scores.get(peer, 0.0)

    def report(self, peer: str, success: bool) -> None:
        self.scores[peer] = self.reputation(peer) + (1.0 if success else -1.0)


@dataclass
class TargetUser:
    name: str
    values: np.ndarray
    mask: np.ndarray
    signatures: list[LshSignature]
    theta: float
    requested: list[int]
    rng: random.Random
    tpk: PaillierPublicKey | None = None
    tsk: paillier.PaillierSecretKey | None = None
    mpk: PaillierPublicKey | None = None

    @property
    def mean(self) -> float:
        return float(self.values[self.mask].mean())


@dataclass
class Participant:
    name: str
    values: np.ndarray
    mask: np.ndarray
    signatures: list[LshSignature]
    superpeer: str = ""
    trust: float | None = None
    shared: dict[str, float] = field(default_factory=dict)
    abstained: str | None = None


@dataclass
class SuperPeer:
    name: str
    members: list[str]
    rng: random.Random
    mpk: PaillierPublicKey | None = None
    tpk: PaillierPublicKey | None = None
    trusts: dict[str, float] = field(default_factory=dict)
    shares: dict[str, list[tuple[LshSignature, float]]] = field(default_factory=dict)
    summaries: dict[str, tuple[float, int]] = field(default_factory=dict)
    forwarded: int = 0


@dataclass
class Mediator:
    rng: random.Random
    mpk: PaillierPublicKey | None = None
    msk: paillier.PaillierSecretKey | None = None
    tpk: PaillierPublicKey | None = None


@dataclass
class PredictionShare:
    signature: LshSignature
    ciphertext: Ciphertext
    participant: str
    trust: float


@dataclass
class Prs:
    rng: random.Random
    mpk: PaillierPublicKey | None = None
    tpk: PaillierPublicKey | None = None
    shares: list[PredictionShare] = field(default_factory=list)
    target_mean: Ciphertext | None = None
    requested: list[LshSignature] = field(default_factory=list)
    weights: dict[str, dict[str, int]] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# protocol steps


def make_pseudonyms(count: int, rng: random.Random) -> list[str]:
    names: list[str] = []
    seen = set()
    while len(names) < count:
        token = format(rng.getrandbits(64), "016x")
        if token not in seen:
            seen.add(token)
            names.append(token)
    return names


def form_groups(participants, group_size: int, registry: ReputationRegistry, rng: random.Random) -> list[tuple[list[str], str]]:
    """Seeded shuffle, contiguous chunks, highest-reputation member leads each chunk."""
    if not participants:
        raise ProtocolError("no participants")
    if group_size < 1:
        raise ProtocolError("group_size must be >= 1")
    order = list(participants)
    rng.shuffle(order)
    groups = []
    for start in range(0, len(order), group_size):
        members = order[start:start + group_size]
        leader = min(members, key=lambda p: (-registry.reputation(p), p))
        groups.append((members, leader))
    return groups


def prepare_keys(bus: MessageBus, target: TargetUser, mediator: Mediator, superpeers, prs: Prs,
                 target_bits: int, mediator_bits: int, scale: int) -> None:
    if mediator_bits < 2 * target_bits + 2:
        raise SetupError(
            f"mediator key ({mediator_bits} bits) must be >= 2 x target key + 2 ({2 * target_bits + 2})"
        )
    mediator.mpk, mediator.msk = paillier.keygen(mediator_bits, mediator.rng)
    for sp in superpeers:
        bus.send("KeyAnnounce", MEDIATOR, sp.name, {"mpk": mediator.mpk})
    bus.send("KeyAnnounce", MEDIATOR, target.name, {"mpk": mediator.mpk})
    bus.send("KeyAnnounce", MEDIATOR, PRS, {"mpk": mediator.mpk})

    target.mpk = bus.drain(target.name, "KeyAnnounce")[0].payload["mpk"]
    target.tpk, target.tsk = paillier.keygen(target_bits, target.rng)
    wrapped = paillier.encrypt(target.mpk, target.tpk.n, target.rng)
    bus.send("KeyAnnounce", target.name, MEDIATOR, {"tpk_wrapped": wrapped, "key_bits": target_bits})

    msg = bus.drain(MEDIATOR, "KeyAnnounce")[0]
    n = paillier.decrypt(mediator.msk, msg.payload["tpk_wrapped"])
    mediator.tpk = PaillierPublicKey(n, msg.payload["key_bits"])
    paillier.check_nesting(mediator.mpk, mediator.tpk)
    for sp in superpeers:
        bus.send("KeyAnnounce", MEDIATOR, sp.name, {"tpk": mediator.tpk})
    bus.send("KeyAnnounce", MEDIATOR, PRS, {"tpk": mediator.tpk})

    for sp in superpeers:
        for m in bus.drain(sp.name, "KeyAnnounce"):
            sp.mpk = m.payload.get("mpk", sp.mpk)
            sp.tpk = m.payload.get("tpk", sp.tpk)
    for m in bus.drain(PRS, "KeyAnnounce"):
        prs.mpk = m.payload.get("mpk", prs.mpk)
        prs.tpk = m.payload.get("tpk", prs.tpk)

    codec = FixedPointCodec.for_key(target.tpk, scale)
    mean_ct = paillier.double_encrypt(target.mpk, target.tpk, codec.encode(target.mean), target.rng)
    bus.send("RecommendationRequest", target.name, PRS, {
        "requested": [target.signatures[q] for q in target.requested],
        "target_mean": mean_ct,
    })
    req = bus.drain(PRS, "RecommendationRequest")[0].payload
    prs.requested = list(req["requested"])
    prs.target_mean = req["target_mean"]


def target_request(bus: MessageBus, target: TargetUser, participants, plan: ObfuscationPlan,
                   fold_width: int) -> None:
    """Broadcast requested items plus the target's sanitized rated items."""
    dense = np.where(target.mask, target.values, 0.0)
    obf, _ = obfuscate_profile(dense, plan, 1.0, fold_width)
    shared = [[target.signatures[q], float(obf[q])] for q in np.flatnonzero(target.mask)]
    payload = {"requested": [target.signatures[q] for q in target.requested], "shared": shared}
    for p in participants:
        bus.send("RecommendationRequest", target.name, p.name, payload)


def participant_respond(bus: MessageBus, p: Participant, plan: ObfuscationPlan, fold_width: int,
                        trust_states: int, rating_range, min_shared: int) -> None:
    """Trust against the target's sanitized ratings, local obfuscation, shares to the super-peer."""
    req = bus.drain(p.name, "RecommendationRequest")[0].payload
    local = {s.key(): q for q, s in enumerate(p.signatures)}
    requested = [(s, local.get(s.key())) for s in req["requested"]]
    requested = [(s, q) for s, q in requested if q is not None and p.mask[q]]
    if not requested:
        p.abstained = "no requested items rated"
        return
    a_vals, b_vals = [], []
    for sig, value in req["shared"]:
        q = local.get(sig.key())
        if q is not None and p.mask[q]:
            a_vals.append(value)
            b_vals.append(p.values[q])
    try:
        score = trust_or_convention(a_vals, b_vals, trust_states, rating_range, min_shared)
    except InsufficientOverlapError:
        p.abstained = "insufficient overlap with target"
        return
    p.trust = score.value
    dense = np.where(p.mask, p.values, 0.0)
    obf, _ = obfuscate_profile(dense, plan, score.value, fold_width)
    p.shared = {s.key(): float(obf[q]) for s, q in requested}
    bus.send("TrustReport", p.name, p.superpeer, {"trust": score.value, "n_shared": score.n_shared})
    bus.send("ObfuscatedShare", p.name, p.superpeer, {
        "shares": [[s, float(obf[q])] for s, q in requested],
    })


def superpeer_collect(bus: MessageBus, sp: SuperPeer) -> None:
    for m in bus.drain(sp.name, "TrustReport"):
        sp.trusts[m.sender] = float(m.payload["trust"])
    for m in bus.drain(sp.name, "ObfuscatedShare"):
        sp.shares[m.sender] = [(s, float(v)) for s, v in m.payload["shares"]]


def superpeer_summaries(bus: MessageBus, superpeers) -> None:
    """Exchange per-item sums and counts of obfuscated ratings between super-peers."""
    for sp in superpeers:
        local: dict[str, list] = {}
        for member in sp.members:
            for sig, value in sp.shares.get(member, []):
                entry = local.setdefault(sig.key(), [0.0, 0])
                entry[0] += value
                entry[1] += 1
        sp.summaries = {k: (v[0], v[1]) for k, v in local.items()}
        for other in superpeers:
            if other is not sp:
                bus.send("ItemSummary", sp.name, other.name, {"items": {k: list(v) for k, v in sorted(local.items())}})
    for sp in superpeers:
        totals = {k: [v[0], v[1]] for k, v in sp.summaries.items()}
        for m in bus.drain(sp.name, "ItemSummary"):
            for k, (s, c) in m.payload["items"].items():
                entry = totals.setdefault(k, [0.0, 0])
                entry[0] += s
                entry[1] += c
        sp.summaries = {k: (v[0], v[1]) for k, v in totals.items()}


def superpeer_aggregate(bus: MessageBus, sp: SuperPeer, theta: float, scale: int, notices: list) -> int:
    """Filter by trust, centre on item means, doubly encrypt, forward to the PRS.

    Returns the number of forwarded shares.
    """
    codec = FixedPointCodec.for_key(sp.tpk, scale)
    entries = []
    for member in sp.members:
        trust = sp.trusts.get(member)
        if trust is None or not trust > theta:
            continue
        for sig, value in sp.shares.get(member, []):
            total, count = sp.summaries[sig.key()]
            centred = value - total / count
            ct = paillier.double_encrypt(sp.mpk, sp.tpk, codec.encode(centred), sp.rng)
            entries.append({"participant": member, "signature": sig, "trust": trust, "ciphertext": ct})
    if not entries:
        notices.append(f"super-peer {sp.name}: no shares above trust threshold")
    bus.send("EncryptedAggregate", sp.name, PRS, {"entries": entries})
    sp.forwarded = len(entries)
    return len(entries)


def prs_ingest(bus: MessageBus, prs: Prs) -> None:
    for m in bus.drain(PRS, "EncryptedAggregate"):
        for e in m.payload["entries"]:
            prs.shares.append(PredictionShare(e["signature"], e["ciphertext"], e["participant"], float(e["trust"])))


def mediator_strip(bus: MessageBus, prs: Prs, mediator: Mediator) -> None:
    """Round trip PRS -> mediator -> PRS removing the outer layer of every stored ciphertext."""
    batch = [s.ciphertext for s in prs.shares] + [prs.target_mean]
    bus.send("EncryptedAggregate", PRS, MEDIATOR, {"ciphertexts": batch})
    incoming = bus.drain(MEDIATOR, "EncryptedAggregate")[0].payload["ciphertexts"]
    stripped = [paillier.strip_layer(mediator.msk, c, mediator.tpk) for c in incoming]
    bus.send("EncryptedAggregate", MEDIATOR, PRS, {"ciphertexts": stripped})
    back = bus.drain(PRS, "EncryptedAggregate")[0].payload["ciphertexts"]
    for share, ct in zip(prs.shares, back[:-1]):
        share.ciphertext = ct
    prs.target_mean = back[-1]


def trust_weights(trusts: dict[str, float], W: int) -> dict[str, int]:
    total = sum(trusts.values())
    if total <= 0:
        raise paillier.ConfigurationError("trust weights sum to zero")
    weights = {p: round(W * t / total) for p, t in trusts.items()}
    if not any(weights.values()):
        raise paillier.ConfigurationError(f"weight scale W={W} too small: every weight rounds to zero")
    return weights


def prs_predict(prs: Prs, q: LshSignature, W: int, route: str = "corrected") -> Ciphertext | None:
    """Homomorphic ``W * (target mean + sum_j w_j/W * centred_j)`` for one item.

    Returns ``None`` when no share exists for ``q``.
    """
    shares = [s for s in prs.shares if s.signature == q]
    if not shares:
        return None
    weights = trust_weights({s.participant: s.trust for s in shares}, W)
    prs.weights[q.key()] = weights
    pk = prs.tpk if route == "corrected" else prs.mpk
    acc = paillier.hom_scalar_mul(pk, prs.target_mean, W)
    for s in shares:
        w = weights[s.participant]
        if w:
            acc = paillier.hom_add(pk, acc, paillier.hom_scalar_mul(pk, s.ciphertext, w))
    return paillier.reblind(pk, acc, prs.rng)


@dataclass
class Referral:
    signature: LshSignature
    item: int
    predicted: float
    rank: int


def deliver_referrals(bus: MessageBus, prs: Prs, mediator: Mediator, target: TargetUser,
                      predictions: dict[str, Ciphertext], W: int, scale: int, cutoff: float,
                      route: str, rating_range) -> tuple[list[Referral], dict[int, float], dict[int, str]]:
    """PRS -> mediator -> target; the target decrypts, decodes, filters and ranks.

    Returns ``(referrals, predictions by item, decode failures by item)``.
    """
    sig_by_key = {s.key(): s for s in prs.requested}
    bus.send("ReferralList", PRS, MEDIATOR, {"items": [[sig_by_key[k], c] for k, c in predictions.items()]})
    items = bus.drain(MEDIATOR, "ReferralList")[0].payload["items"]
    if route == "paper-literal":
        # outer layer still present: the mediator removes it, reducing into
        # the inner ciphertext space
        items = [[s, _literal_strip(mediator, c)] for s, c in items]
    bus.send("ReferralList", MEDIATOR, target.name, {"items": items})
    received = bus.drain(target.name, "ReferralList")[0].payload["items"]

    codec = FixedPointCodec.for_key(target.tpk, scale)
    lo, hi = rating_range
    bound = 10.0 * (hi - lo)
    index = {s.key(): q for q, s in enumerate(target.signatures)}
    values: dict[int, float] = {}
    failures: dict[int, str] = {}
    for sig, ct in received:
        q = index[sig.key()]
        try:
            values[q] = codec.decode_bounded(paillier.decrypt(target.tsk, ct), bound, W)
        except paillier.PaillierError as exc:
            failures[q] = f"item {q}: {exc}"
    referrals = rank_referrals(values, target, cutoff, scale)
    return referrals, values, failures


def _literal_strip(mediator: Mediator, c: Ciphertext) -> Ciphertext:
    inner = paillier.decrypt(mediator.msk, c)
    return Ciphertext(inner % mediator.tpk.nsquare, mediator.tpk.key_id, 1)


def rank_referrals(values: dict[int, float], target: TargetUser, cutoff: float,
                   scale: int | None = None) -> list[Referral]:
    """Unrated items predicted at or above ``cutoff``, best first.

    With ``scale`` the cutoff is snapped to the fixed-point grid so a
    prediction equal to the cutoff in the clear stays equal after encoding.
    """
    if scale is not None:
        cutoff = round(cutoff * scale) / scale
        cutoff -= 1e-12 * max(1.0, abs(cutoff))
    keep = [(q, p) for q, p in values.items() if not target.mask[q] and p >= cutoff]
    keep.sort(key=lambda qp: (-qp[1], target.signatures[qp[0]].key()))
    return [Referral(target.signatures[q], q, p, r + 1) for r, (q, p) in enumerate(keep)]


# ---------------------------------------------------------------------------
# driver


@dataclass
class SimulationConfig:
    ratings: RatingMatrix
    target: int
    participants: list[int]
    plan: ObfuscationPlan = field(default_factory=lambda: ObfuscationPlan(
        L=10, sigma=6.0, k_core=2, k_nn=4,
        trust_intervals=((0.0, 0.3, 1), (0.3, 0.6, 2), (0.6, 1.0, 10)),
        angle_range=(0.0, 0.0)))
    catalog: list[ItemMeta] | None = None
    requested: list[int] | None = None
    fold_width: int = 10
    theta: float = 0.0
    group_size: int = 10
    target_key_bits: int = 512
    mediator_key_bits: int = 1026
    weight_scale: int = 10**8
    fp_scale: int = 10**6
    seed: int = 0
    route: str = "corrected"
    cutoff: float = 0.0
    trust_states: int = DEFAULT_STATES
    min_shared: int = 2
    lsh: LshScheme = field(default_factory=LshScheme)
    audit: bool = True

    def __post_init__(self):
        if self.route not in ROUTES:
            raise SetupError(f"route must be one of {ROUTES}")
        if not 0.0 <= self.theta <= 1.0:
            raise SetupError("theta must lie in [0, 1]")
        if self.target in self.participants:
            raise SetupError("target cannot be a participant")


@dataclass
class ClearView:
    """Plaintext mirror of what the protocol computed on, for oracle checks."""
    matrix: RatingMatrix
    target_row: int
    trusts: dict[int, float]
    theta: float
    requested: list[int]
    rows: dict[str, int]


@dataclass
class SimulationResult:
    referrals: list[Referral]
    transcript: ProtocolTranscript
    predictions: dict[int, float]
    failures: dict[int, str]
    notices: list[str]
    metrics: dict
    clear: ClearView
    registry: ReputationRegistry
    plaintexts: set[int]
    secrets: set[int]
    mediator_sk: paillier.PaillierSecretKey | None = None

    def referrals_csv(self) -> str:
        lines = ["item_signature,predicted_rating,rank"]
        for r in self.referrals:
            lines.append(f"{r.signature.to_hex()},{r.predicted!r},{r.rank}")
        return "\n".join(lines) + "\n"


def _rng(seed: int, name: str) -> random.Random:
    return random.Random(f"{seed}:{name}")


def run_simulation(cfg: SimulationConfig) -> SimulationResult:
    m = cfg.ratings
    catalog = cfg.catalog or default_catalog(m.n_items)
    if len(catalog) != m.n_items:
        raise SetupError("catalog size does not match the item count")
    signatures = [hash_item(item, cfg.lsh) for item in catalog]
    bus = MessageBus()
    notices: list[str] = []

    names = make_pseudonyms(len(cfg.participants) + 1, _rng(cfg.seed, "pseudonyms"))
    target_name, part_names = names[0], names[1:]
    row_of = dict(zip(part_names, cfg.participants))
    t_mask = m.mask[cfg.target].copy()
    requested = cfg.requested if cfg.requested is not None else [int(q) for q in np.flatnonzero(~t_mask)]
    target = TargetUser(target_name, m.values[cfg.target].copy(), t_mask, signatures,
                        cfg.theta, list(requested), _rng(cfg.seed, "target"))
    participants = [Participant(n, m.values[r].copy(), m.mask[r].copy(), signatures) for n, r in row_of.items()]
    by_name = {p.name: p for p in participants}

    sac_rng = _rng(cfg.seed, "sac")
    registry = ReputationRegistry({n: sac_rng.random() for n in part_names})
    groups = form_groups(part_names, cfg.group_size, registry, _rng(cfg.seed, "groups"))
    superpeers = []
    for members, leader in groups:
        sp = SuperPeer(leader, members, _rng(cfg.seed, f"sp:{leader}"))
        superpeers.append(sp)
        for name in members:
            by_name[name].superpeer = leader
    mediator = Mediator(_rng(cfg.seed, "mediator"))
    prs = Prs(_rng(cfg.seed, "prs"))

    try:
        # preparation
        prepare_keys(bus, target, mediator, superpeers, prs, cfg.target_key_bits,
                     cfg.mediator_key_bits, cfg.fp_scale)
        # encryption
        target_request(bus, target, participants, cfg.plan, cfg.fold_width)
        for p in participants:
            participant_respond(bus, p, cfg.plan, cfg.fold_width, cfg.trust_states, m.rating_range, cfg.min_shared)
            if p.abstained:
                notices.append(f"participant {p.name} abstained: {p.abstained}")
        for sp in superpeers:
            superpeer_collect(bus, sp)
        superpeer_summaries(bus, superpeers)
        for sp in superpeers:
            superpeer_aggregate(bus, sp, cfg.theta, cfg.fp_scale, notices)
        # recommendation
        prs_ingest(bus, prs)
        if cfg.route == "corrected":
            mediator_strip(bus, prs, mediator)
        predictions = {}
        for sig in prs.requested:
            ct = prs_predict(prs, sig, cfg.weight_scale, cfg.route)
            if ct is None:
                notices.append(f"no shares for item {sig.to_hex()[-16:]}; skipped")
                continue
            predictions[sig.key()] = ct
        referrals, values, failures = deliver_referrals(
            bus, prs, mediator, target, predictions, cfg.weight_scale, cfg.fp_scale,
            cfg.cutoff, cfg.route, m.rating_range)
        for sp in superpeers:
            for member in sp.members:
                if by_name[member].abstained is None:
                    bus.send("ReputationReport", member, SAC, {"peer": sp.name, "success": True})
        for msg in bus.drain(SAC, "ReputationReport"):
            registry.report(msg.payload["peer"], bool(msg.payload["success"]))
    except Exception as exc:
        exc.transcript = bus.transcript  # type: ignore[attr-defined]
        raise

    clear = _clear_view(m, cfg, target, participants, row_of, requested)
    metrics = {
        "participants": len(participants),
        "responding": sum(1 for p in participants if p.abstained is None),
        "superpeers": len(superpeers),
        "forwarded_shares": sum(sp.forwarded for sp in superpeers),
        "messages": len(bus.transcript.messages),
        "route": cfg.route,
        "trust": {row_of[p.name]: p.trust for p in participants if p.trust is not None},
    }
    plaintexts = _plaintext_set(m, cfg, participants, superpeers, target)
    secrets = {mediator.msk.lam, mediator.msk.mu, target.tsk.lam, target.tsk.mu}
    return SimulationResult(referrals, bus.transcript, values, failures, notices, metrics, clear,
                            registry, plaintexts, secrets, mediator.msk)


def _clear_view(m: RatingMatrix, cfg: SimulationConfig, target: TargetUser, participants, row_of, requested) -> ClearView:
    """Target row (true visible ratings) plus each responding participant's shared values."""
    rows = [np.where(target.mask, target.values, np.nan)]
    masks = [target.mask.copy()]
    trusts = {}
    row_index = {target.name: 0}
    index = {s.key(): q for q, s in enumerate(target.signatures)}
    for p in participants:
        if p.abstained is not None:
            continue
        v = np.full(m.n_items, np.nan)
        for key, value in p.shared.items():
            v[index[key]] = value
        row_index[p.name] = len(rows)
        trusts[len(rows)] = p.trust
        rows.append(v)
        masks.append(~np.isnan(v))
    mat = RatingMatrix(np.array(rows), np.array(masks), (-np.inf, np.inf))
    return ClearView(mat, 0, trusts, cfg.theta, list(requested), row_index)


def _plaintext_set(m: RatingMatrix, cfg: SimulationConfig, participants, superpeers, target: TargetUser) -> set[int]:
    """Fixed-point encodings of every true rating and every centred share value."""
    codec = FixedPointCodec.for_key(target.tpk, cfg.fp_scale)
    out: set[int] = set()
    values = list(m.values[m.mask]) + [target.mean]
    for sp in superpeers:
        for member in sp.members:
            for sig, value in sp.shares.get(member, []):
                total, count = sp.summaries[sig.key()]
                values.append(value - total / count)
    for v in values:
        out.add(codec.encode(float(v)))
        out.add(abs(codec.quantize(float(v))))
    out.discard(0)
    return out


# ---------------------------------------------------------------------------
# audit


def _ints_in(obj) -> list[int]:
    found = []
    if isinstance(obj, dict):
        for k, v in obj.items():
            if k in ("ct", "n", "g") and isinstance(v, str):
                found.append(int(v, 16))
            elif k == "layer":
                # ciphertext metadata, not payload
                continue
            else:
                found.extend(_ints_in(v))
    elif isinstance(obj, list):
        for v in obj:
            found.extend(_ints_in(v))
    elif isinstance(obj, bool):
        pass
    elif isinstance(obj, int):
        found.append(obj)
    elif isinstance(obj, float) and obj.is_integer():
        found.append(int(obj))
    return found


@dataclass
class AuditResult:
    passed: bool
    violations: list[str]


def audit_transcript(result: SimulationResult) -> AuditResult:
    """Leak check over every message.

    * nothing the PRS or mediator receives contains a fixed-point plaintext
      rating, including what the mediator can see after removing its own
      layer;
    * no secret-key component appears in any message.
    """
    violations = []
    plain = result.plaintexts
    msk = result.mediator_sk
    for msg in result.transcript.messages:
        wire = json.loads(msg.wire())
        ints = _ints_in(wire)
        leaked = result.secrets.intersection(ints)
        if leaked:
            violations.append(f"seq {msg.seq}: secret key material in {msg.kind}")
        if msg.receiver in (PRS, MEDIATOR):
            hits = plain.intersection(ints)
            if hits:
                violations.append(f"seq {msg.seq}: plaintext rating encoding visible to {msg.receiver}")
        if msg.receiver == MEDIATOR and msk is not None:
            for ct in _ciphertexts_in(msg.payload):
                if ct.key_id == msk.key_id and ct.layer == 2:
                    if paillier.decrypt(msk, ct) in plain:
                        violations.append(f"seq {msg.seq}: mediator can read an inner plaintext")
    return AuditResult(not violations, violations)


def _ciphertexts_in(obj):
    if isinstance(obj, Ciphertext):
        yield obj
    elif isinstance(obj, dict):
        for v in obj.values():
            yield from _ciphertexts_in(v)
    elif isinstance(obj, (list, tuple)):
        for v in obj:
            yield from _ciphertexts_in(v)


def clear_path_prediction(view: ClearView, q: int, W: int, scale: int) -> float | None:
    """Exact integer replay of the corrected route without encryption."""
    m = view.matrix
    raters = [j for j, t in view.trusts.items() if t > view.theta and m.mask[j, q]]
    if not raters:
        return None
    col = m.values[m.mask[:, q], q]
    mean_q = float(col.sum() / col.size)
    weights = trust_weights({j: view.trusts[j] for j in raters}, W)
    total = W * round(m.user_mean(view.target_row) * scale)
    for j in raters:
        total += weights[j] * round((m.values[j, q] - mean_q) * scale)
    return total / (scale * W)

