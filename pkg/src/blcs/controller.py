"""Per-domain secure controller: disclosure, peer verification, trust records, leader sync."""

from __future__ import annotations

import json
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .assoc_memory import RelationMemory
from .errors import (Inconsistent, InsufficientDisclosure, InvalidInput, LeaderQuarantined, NoRelations,
                     PrivacyViolation)
from .fron_topology import FREE, Topology, check_candidate, infer_occupancy
from .knowledge_base import KnowledgeBase, KnowledgeTriple, associate

DEFAULT_TAU = 0.7
DEFAULT_DEPTH = 3
CACHE_TTL = 200
PHASE_LEN = 100
PHASES = 4
VERDICT_RING = 16
MSG_VERSION = 1
MSG_TYPES = ("AUTH_REQ", "AUTH_RESP", "SYNC")
EVENT_FIELDS = ("t", "l_loc", "a_type")


def phase_token(t: float, phase_len: int = PHASE_LEN, phases: int = PHASES) -> str:
    return f"st:phase{int(t // phase_len) % phases}"


def loc_token(node: str) -> str:
    return f"loc:{node}"


# --------------------------------------------------------------------------
# records and messages
# --------------------------------------------------------------------------


@dataclass
class TrustRecord:
    honesty: float = 0.5
    reliability: float = 0.5
    collaboration: float = 0.5
    verdicts: deque = field(default_factory=lambda: deque(maxlen=VERDICT_RING))
    cached_trusted: bool | None = None
    issued: float = 0.0
    expiry: float = 0.0

    @property
    def composite(self) -> float:
        return (self.honesty + self.reliability + self.collaboration) / 3.0

    def cache(self, trusted: bool, tick: float, ttl: float = CACHE_TTL) -> None:
        if ttl <= 0:
            raise InvalidInput("cache ttl must be positive")
        self.cached_trusted = trusted
        self.issued = tick
        self.expiry = tick + ttl

    def cached(self, tick: float) -> bool | None:
        """The cached verdict if still fresh, else None."""
        if self.cached_trusted is None or tick >= self.expiry:
            return None
        return self.cached_trusted

    def invalidate(self) -> None:
        self.cached_trusted = None


@dataclass
class RedactionPolicy:
    keep: frozenset = frozenset(EVENT_FIELDS)
    p_id_private: bool = True
    fragment_slots: int = 0          # known slots exposed per fragment link
    fragment_links: tuple = ()

    def __post_init__(self):
        self.keep = frozenset(self.keep)
        bad = self.keep - set(EVENT_FIELDS) - {"P_id"}
        if bad:
            raise InvalidInput(f"unknown event fields {sorted(bad)}")
        if self.fragment_slots < 0:
            raise InvalidInput("fragment_slots must be >= 0")


@dataclass(frozen=True)
class PartialInfo:
    sender: str
    nonce: int
    t: float | None = None
    l_loc: str | None = None
    a_type: str | None = None
    P_id: str | None = None
    fragment: dict = field(default_factory=dict)    # link -> {slot: value}
    skeletons: dict = field(default_factory=dict)   # lightpath -> links

    def fields(self) -> frozenset:
        return frozenset(f for f in ("t", "l_loc", "a_type", "P_id") if getattr(self, f) is not None)

    def to_dict(self) -> dict:
        d = {"sender": self.sender, "nonce": self.nonce}
        for f in sorted(self.fields()):
            d[f] = getattr(self, f)
        if self.fragment:
            d["fragment"] = {str(l): {str(s): v for s, v in sorted(row.items())}
                             for l, row in sorted(self.fragment.items())}
            d["skeletons"] = {str(p): list(ls) for p, ls in sorted(self.skeletons.items())}
        return d


@dataclass
class TrustVerdict:
    peer: str
    trusted: bool
    reason: str
    confidence: float = 0.0
    handler: str | None = None
    evidence: list = field(default_factory=list)


@dataclass(frozen=True)
class AuthMessage:
    type: str
    sender: str
    nonce: int
    payload: dict
    version: int = MSG_VERSION

    def __post_init__(self):
        if self.type not in MSG_TYPES:
            raise InvalidInput(f"message type {self.type!r} not in {MSG_TYPES}")

    def to_json(self) -> str:
        return json.dumps({"type": self.type, "sender": self.sender, "nonce": self.nonce,
                           "payload": self.payload, "version": self.version}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "AuthMessage":
        d = json.loads(text)
        if d.get("version") != MSG_VERSION:
            raise InvalidInput(f"unsupported message version {d.get('version')}")
        return cls(d["type"], d["sender"], int(d["nonce"]), d["payload"], d["version"])


# --------------------------------------------------------------------------
# controller state
# --------------------------------------------------------------------------


@dataclass
class PeerHistory:
    claims: deque = field(default_factory=deque)     # claim consistent with inference?
    segments: deque = field(default_factory=deque)   # segment carried traffic without fault?
    replies: deque = field(default_factory=deque)    # answered within deadline?


@dataclass
class ControllerState:
    id: str
    domain: str
    kb: KnowledgeBase
    mem: RelationMemory | None
    scorer: object = None
    role: str = "receiver"
    honest: bool = True                          # ground truth, never read by the protocol
    colluders: frozenset = frozenset()           # filled only for colluding malicious controllers
    own_masks: dict = field(default_factory=dict, repr=False)   # private: link -> owners array
    skeletons: dict = field(default_factory=dict)               # shared: lightpath -> tuple(links)
    peer_views: dict = field(default_factory=dict)              # link -> {slot: value} from fragments
    trust: dict = field(default_factory=dict)
    history: dict = field(default_factory=dict)
    pending_skeletons: list = field(default_factory=list)       # (tick, seq, op, lp, links)
    outbox: list = field(default_factory=list)                  # evidence triples for sync
    vouches: dict = field(default_factory=dict)                 # peer -> tick of last vouch received
    verdict_summary: dict = field(default_factory=dict)         # peer -> [trusted, untrusted]
    tau: float = DEFAULT_TAU
    depth: int = DEFAULT_DEPTH

    def __post_init__(self):
        if self.role not in ("leader", "receiver"):
            raise InvalidInput(f"role {self.role!r}")

    def record(self, peer: str) -> TrustRecord:
        rec = self.trust.get(peer)
        if rec is None:
            rec = self.trust[peer] = TrustRecord()
        return rec

    def peer_history(self, peer: str) -> PeerHistory:
        h = self.history.get(peer)
        if h is None:
            h = self.history[peer] = PeerHistory()
        return h

    def note_skeleton(self, tick: float, seq: int, op: str, lp: int, links: Sequence[int] = ()) -> None:
        if op not in ("add", "remove"):
            raise InvalidInput(f"skeleton op {op!r}")
        self.pending_skeletons.append((tick, seq, op, int(lp), tuple(int(l) for l in links)))

    def observe(self, triple: KnowledgeTriple) -> None:
        """Record first-hand evidence locally and queue it for the next sync."""
        self.kb.insert(triple)
        self.outbox.append(triple)


def build_event_memory(topology: Topology, scorer, affairs: Iterable[str], phases: int = PHASES,
                       k: int = 3, theta_match: float = 0.8) -> RelationMemory:
    """Relation memory over every public (location, phase, affair) event, grouped by handling controller."""
    affairs = sorted(affairs)
    mem = None
    for d in sorted(topology.domains):
        dom = topology.domains[d]
        for node in dom.nodes:
            for ph in range(phases):
                for a in affairs:
                    v = scorer.relation_vector((loc_token(node), f"st:phase{ph}", a))
                    if mem is None:
                        mem = RelationMemory(v.shape[0], k, theta_match)
                    mem.store(v, dom.controller)
    if mem is None:
        raise InvalidInput("topology has no nodes")
    return mem


# --------------------------------------------------------------------------
# protocol operations
# --------------------------------------------------------------------------


def make_partial_info(state: ControllerState, event, policy: RedactionPolicy | None = None, nonce: int = 0,
                      rng: np.random.Generator | None = None, lightpaths: dict | None = None) -> PartialInfo:
    """Redact ``event`` for disclosure to a verifier.

    With ``policy.fragment_slots > 0`` a spectrum fragment over
    ``policy.fragment_links`` is attached: that many slots per link taken
    from the sender's own masks, with the skeletons of the lightpaths they
    name (``lightpaths``: id -> links).
    """
    policy = policy or RedactionPolicy()
    if "P_id" in policy.keep and policy.p_id_private:
        raise PrivacyViolation("policy discloses a private event identifier")
    vals = {f: getattr(event, f) for f in policy.keep}
    frag: dict[int, dict[int, int]] = {}
    skel: dict[int, tuple] = {}
    if policy.fragment_slots:
        for link in policy.fragment_links:
            owners = state.own_masks.get(link)
            if owners is None:
                raise InvalidInput(f"link {link} is not in the sender's domain")
            n = len(owners)
            if policy.fragment_slots >= n:
                raise PrivacyViolation("fragment would expose a full spectrum mask")
            if rng is None:
                chosen = list(range(policy.fragment_slots))
            else:
                chosen = sorted(int(s) for s in rng.choice(n, policy.fragment_slots, replace=False))
            row = {}
            for s in chosen:
                v = int(owners[s])
                row[s] = v
                if v > 0:
                    if lightpaths is None or v not in lightpaths:
                        raise InvalidInput(f"no skeleton for lightpath {v}")
                    skel[v] = tuple(lightpaths[v])
            frag[int(link)] = row
    if not vals and not frag:
        raise InsufficientDisclosure("policy leaves nothing to verify")
    return PartialInfo(state.id, int(nonce), vals.get("t"), vals.get("l_loc"), vals.get("a_type"),
                       vals.get("P_id"), frag, skel)


def contradictory_fragment(links: Sequence[int], slots: int, lp_id: int, slot: int = 0) -> tuple[dict, dict]:
    """A fragment breaking continuity: ``lp_id`` holds ``slot`` on the first link but reports it free on the second."""
    if len(links) < 2:
        raise InvalidInput("need two links to contradict continuity")
    if not 0 <= slot < slots:
        raise InvalidInput("slot out of range")
    a, b = int(links[0]), int(links[1])
    return {a: {slot: lp_id}, b: {slot: FREE}}, {lp_id: (a, b)}


def verify_peer(state: ControllerState, info: PartialInfo, candidate: tuple | None = None,
                slots: int | None = None) -> TrustVerdict:
    """Judge a peer from its partial disclosure.

    The disclosed event is embedded and recalled from relation memory; the
    recalled group names the controller that should have handled it.  The
    peer is trusted only if recall confidence reaches ``state.tau``, the
    handler is the sender itself, the knowledge graph holds no abnormal
    behavior for it, and any spectrum fragment admits a consistent
    completion (and leaves ``candidate = (links, lo, hi)`` unblocked).
    """
    peer = info.sender
    ev: list[str] = []
    if state.colluders and not state.honest and peer in state.colluders:
        return TrustVerdict(peer, True, "vouched", 1.0, peer, ["colluder"])
    if info.fragment:
        width = slots or (max((len(m) for m in state.own_masks.values()), default=0) or 16)
        merged = {}
        for p, ls in info.skeletons.items():
            known = state.skeletons.get(int(p))
            if known is not None and tuple(sorted(known)) != tuple(sorted(ls)):
                ev.append(f"skeleton-mismatch:{p}")
                return TrustVerdict(peer, False, "inconsistent-spectrum", 0.0, None, ev)
            merged[int(p)] = ls
        try:
            inferred = infer_occupancy(info.fragment, merged, width)
        except Inconsistent as e:
            ev.append(f"inconsistent:{e}")
            return TrustVerdict(peer, False, "inconsistent-spectrum", 0.0, None, ev)
        ev.append("spectrum-consistent")
        if candidate is not None:
            links, lo, hi = candidate
            if check_candidate(inferred, links, lo, hi) == "conflicting":
                ev.append("candidate-conflicting")
                return TrustVerdict(peer, False, "conflicting-candidate", 0.0, None, ev)
    if info.t is None or info.l_loc is None or info.a_type is None:
        return TrustVerdict(peer, False, "insufficient-disclosure", 0.0, None, ev)
    if state.mem is None or len(state.mem) == 0:
        return TrustVerdict(peer, False, "no-relations", 0.0, None, ev)
    try:
        q = state.scorer.relation_vector((info.l_loc, phase_token(info.t), info.a_type))
        r = state.mem.recall(q)
    except NoRelations:
        return TrustVerdict(peer, False, "no-relations", 0.0, None, ev)
    handler = r.group
    ev.append(f"recall:{handler}:{r.confidence:.6f}:{r.iterations}")
    if r.confidence < state.tau:
        return TrustVerdict(peer, False, "low-confidence", r.confidence, handler, ev)
    if handler != peer:
        return TrustVerdict(peer, False, "handler-mismatch", r.confidence, handler, ev)
    isbrn = state.kb.isbrn
    reached = associate(isbrn, handler, state.depth)
    ev.append(f"associated:{len(reached)}")
    abnormal = isbrn.abnormal_behaviors(handler)
    if abnormal:
        ev.extend(f"abnormal:{b}" for b in abnormal)
        return TrustVerdict(peer, False, "abnormal-behavior", r.confidence, handler, ev)
    return TrustVerdict(peer, True, "verified", r.confidence, handler, ev)


def _rate(d: deque, window: int) -> float:
    if not d:
        return 0.5
    recent = list(d)[-window:]
    return sum(1 for x in recent if x) / len(recent)


def evaluate_peer(state: ControllerState, peer: str, window: int = 20) -> TrustRecord:
    """Refresh the peer's honesty, reliability and collaboration from the last ``window`` observations."""
    if window < 1:
        raise InvalidInput("window must be >= 1")
    rec = state.record(peer)
    h = state.history.get(peer)
    if h is None:
        rec.honesty = rec.reliability = rec.collaboration = 0.5
        return rec
    rec.honesty = _rate(h.claims, window)
    rec.reliability = _rate(h.segments, window)
    rec.collaboration = _rate(h.replies, window)
    return rec


# --------------------------------------------------------------------------
# leader synchronization
# --------------------------------------------------------------------------

SYNC_LOCK = threading.Lock()


def replay_skeletons(base: dict, updates: Iterable[tuple]) -> dict:
    """Apply (tick, seq, op, lp, links) updates in (tick, seq) order."""
    out = dict(base)
    for tick, seq, op, lp, links in sorted(updates, key=lambda u: (u[0], u[1])):
        if op == "add":
            out[lp] = tuple(links)
        else:
            out.pop(lp, None)
    return out


def leader_quarantined(leader: ControllerState, followers: Sequence[ControllerState]) -> bool:
    honest = [f for f in followers if f.honest and f.id != leader.id]
    if not honest:
        return False
    against = sum(1 for f in honest if f.trust.get(leader.id) is not None
                  and f.trust[leader.id].cached_trusted is False)
    return 2 * against >= len(honest) and against > 0


def sync_with_leader(leader: ControllerState, followers: Sequence[ControllerState], tick: float,
                     lock: threading.Lock | None = None, log: list | None = None) -> dict:
    """One exclusive synchronization round through the leading controller.

    Shared skeletons become the replay of every pending update; evidence
    triples reach every other controller's knowledge base; vouches from
    colluders are forwarded.  Private masks are never read.  Returns a
    summary of what moved.
    """
    if leader.role != "leader":
        raise InvalidInput(f"{leader.id} is not the leader")
    lock = lock or SYNC_LOCK
    with lock:
        if log is not None:
            log.append(("sync-begin", tick))
        everyone = [leader] + [f for f in followers if f.id != leader.id]
        if leader_quarantined(leader, everyone):
            if log is not None:
                log.append(("sync-end", tick))
            raise LeaderQuarantined(f"leader {leader.id} distrusted by honest controllers")
        updates = []
        for c in everyone:
            updates.extend(c.pending_skeletons)
            c.pending_skeletons = []
        shared = replay_skeletons(leader.skeletons, updates)

        evidence: list[tuple[str, KnowledgeTriple]] = []
        for c in everyone:
            for t in c.outbox:
                evidence.append((c.id, t))
            c.outbox = []
        if not leader.honest and leader.colluders:
            evidence = [(r, t) for r, t in evidence if t.identification not in leader.colluders]
        evidence.sort(key=lambda rt: (rt[1].timestamp, rt[0], rt[1].tokens))

        vouches = []
        for c in everyone:
            if not c.honest and c.colluders:
                vouches.extend((c.id, p) for p in sorted(c.colluders) if p != c.id)

        moved = 0
        for c in everyone:
            c.skeletons = dict(shared)
            for reporter, t in evidence:
                if reporter == c.id:
                    continue
                relayed = KnowledgeTriple(t.identification, t.status, t.behavior, t.timestamp, f"sync:{reporter}")
                if c.kb.insert(relayed):
                    moved += 1
            for voucher, p in vouches:
                if c.id not in (voucher, p):
                    c.vouches[p] = tick
        for c in everyone:
            for peer, rec in c.trust.items():
                if rec.verdicts:
                    s = c.verdict_summary.setdefault(peer, [0, 0])
                    s[0] = sum(1 for v in rec.verdicts if v)
                    s[1] = sum(1 for v in rec.verdicts if not v)
        if log is not None:
            log.append(("sync-end", tick))
    return {"skeletons": len(shared), "evidence": moved, "vouches": len(vouches)}


def audit_privacy(state: ControllerState, topology: Topology) -> None:
    """Fail if the controller holds a complete spectrum mask for a link outside its domain."""
    nd = topology.node_domain
    for link, row in state.peer_views.items():
        l = topology.links[int(link)]
        if state.domain in (nd[l.a], nd[l.b]):
            continue
        if len(row) >= topology.slots:
            raise PrivacyViolation(f"{state.id} holds the full mask of foreign link {link}")
    for link in state.own_masks:
        l = topology.links[int(link)]
        if state.domain not in (nd[l.a], nd[l.b]):
            raise PrivacyViolation(f"{state.id} holds private mask of foreign link {link}")
