import threading
import zlib

import numpy as np
import pytest

from blcs.controller import (AuthMessage, ControllerState, PartialInfo, RedactionPolicy, TrustRecord, audit_privacy,
                             build_event_memory, contradictory_fragment, evaluate_peer, leader_quarantined,
                             loc_token, make_partial_info, phase_token, sync_with_leader, verify_peer)
from blcs.errors import Inconsistent, InsufficientDisclosure, InvalidInput, LeaderQuarantined, PrivacyViolation
from blcs.fron_topology import default_topology, infer_occupancy
from blcs.knowledge_base import EventInfo, KnowledgeBase, KnowledgeTriple, rebuild

AFFAIRS = ["af:sense", "af:compute"]


def token_vec(tok, dim=24):
    return np.random.default_rng(zlib.crc32(tok.encode())).normal(size=dim)


class StubScorer:
    """Location dominates the relation vector; abnormal triples score low."""

    def __init__(self, bad=()):
        self.bad = set(bad)

    def relation_vector(self, t):
        return token_vec(t[0]) + 0.05 * token_vec(t[1]) + 0.05 * token_vec(t[2])

    def score(self, t):
        return 0.1 if tuple(t) in self.bad else 0.9


def make_state(topo, cid, scorer, triples=(), role="receiver", honest=True, colluders=frozenset()):
    dom = topo.controller_domain[cid]
    ids = sorted(d.controller for d in topo.domains.values())
    kb = KnowledgeBase(ids, ["st:light", "st:heavy"], ["bh:forward", "bh:corrupt_segment"])
    for k, t in enumerate(triples):
        kb.insert(KnowledgeTriple(t[0], t[1], t[2], float(k), dom))
    rebuild(kb, scorer)
    mem = build_event_memory(topo, scorer, AFFAIRS)
    return ControllerState(cid, dom, kb, mem, scorer, role=role, honest=honest, colluders=colluders)


def event_at(node, t=30.0):
    return EventInfo("private-7", t, loc_token(node), "af:sense")


def test_default_policy_discloses_exactly_three_fields():
    topo = default_topology()
    st = make_state(topo, "SC-W1", StubScorer())
    info = make_partial_info(st, event_at("w1a"))
    assert info.fields() == frozenset({"t", "l_loc", "a_type"})
    assert "P_id" not in info.to_dict()


def test_policy_keeping_private_id_is_rejected():
    topo = default_topology()
    st = make_state(topo, "SC-W1", StubScorer())
    with pytest.raises(PrivacyViolation):
        make_partial_info(st, event_at("w1a"), RedactionPolicy(keep={"t", "l_loc", "a_type", "P_id"}))
    with pytest.raises(InsufficientDisclosure):
        make_partial_info(st, event_at("w1a"), RedactionPolicy(keep=()))


def test_fragment_exposes_exactly_the_configured_slot_count():
    topo = default_topology()
    st = make_state(topo, "SC-W1", StubScorer())
    st.own_masks = {0: np.zeros(16, dtype=np.int64)}
    info = make_partial_info(st, event_at("w1a"), RedactionPolicy(fragment_slots=4, fragment_links=(0,)),
                             rng=np.random.default_rng(1))
    assert len(info.fragment[0]) == 4
    with pytest.raises(PrivacyViolation):
        make_partial_info(st, event_at("w1a"), RedactionPolicy(fragment_slots=16, fragment_links=(0,)))


def test_honest_peer_is_trusted_and_verdict_is_deterministic():
    topo = default_topology()
    sc = StubScorer()
    verifier = make_state(topo, "SC-OPT", sc, [("SC-W1", "st:light", "bh:forward")])
    info = make_partial_info(make_state(topo, "SC-W1", sc), event_at("w1b"))
    v1 = verify_peer(verifier, info)
    v2 = verify_peer(verifier, info)
    assert v1.trusted and v1.reason == "verified" and v1.handler == "SC-W1"
    assert v1 == v2


def test_peer_with_abnormal_history_is_untrusted():
    topo = default_topology()
    bad = ("SC-C1", "st:heavy", "bh:corrupt_segment")
    sc = StubScorer([bad])
    verifier = make_state(topo, "SC-OPT", sc, [bad, ("SC-C1", "st:light", "bh:forward")])
    info = make_partial_info(make_state(topo, "SC-C1", sc), event_at("c1a"))
    v = verify_peer(verifier, info)
    assert not v.trusted and v.reason == "abnormal-behavior"
    assert "abnormal:bh:corrupt_segment" in v.evidence


def test_claiming_someone_elses_event_is_handler_mismatch():
    topo = default_topology()
    sc = StubScorer()
    verifier = make_state(topo, "SC-OPT", sc)
    forged = PartialInfo("SC-C2", 1, 30.0, loc_token("w2a"), "af:sense")
    v = verify_peer(verifier, forged)
    assert not v.trusted and v.reason == "handler-mismatch" and v.handler == "SC-W2"


def test_empty_memory_is_untrusted_by_default():
    topo = default_topology()
    st = make_state(topo, "SC-OPT", StubScorer())
    st.mem = None
    v = verify_peer(st, PartialInfo("SC-W1", 1, 1.0, loc_token("w1a"), "af:sense"))
    assert not v.trusted and v.reason == "no-relations"


def test_continuity_contradiction_always_untrusted():
    topo = default_topology()
    verifier = make_state(topo, "SC-OPT", StubScorer())
    rng = np.random.default_rng(9)
    for _ in range(30):
        links = [int(x) for x in rng.choice(len(topo.links), 2, replace=False)]
        slot = int(rng.integers(16))
        frag, skel = contradictory_fragment(links, 16, 5, slot)
        with pytest.raises(Inconsistent):
            infer_occupancy(frag, skel, 16)
        info = PartialInfo("SC-W1", 1, 30.0, loc_token("w1a"), "af:sense", None, frag, skel)
        v = verify_peer(verifier, info, slots=16)
        assert not v.trusted and v.reason == "inconsistent-spectrum"


def test_evaluate_peer_counts_recent_history():
    topo = default_topology()
    st = make_state(topo, "SC-OPT", StubScorer())
    rec = evaluate_peer(st, "SC-W1")
    assert (rec.honesty, rec.reliability, rec.collaboration) == (0.5, 0.5, 0.5)
    h = st.peer_history("SC-W1")
    h.claims.extend([True] * 7 + [False] * 3)
    h.segments.extend([True] * 8 + [False] * 2)
    h.replies.extend([True] * 9 + [False] * 1)
    rec = evaluate_peer(st, "SC-W1")
    assert (rec.honesty, rec.reliability, rec.collaboration) == (0.7, 0.8, 0.9)
    assert rec.composite == pytest.approx(0.8)
    h2 = st.peer_history("SC-W2")
    for d in (h2.claims, h2.segments, h2.replies):
        d.extend([True] * 10)
    rec = evaluate_peer(st, "SC-W2")
    assert (rec.honesty, rec.reliability, rec.collaboration) == (1.0, 1.0, 1.0)


def test_trust_cache_expiry():
    rec = TrustRecord()
    rec.cache(True, 10.0, ttl=200)
    assert rec.cached(209.0) is True
    assert rec.cached(210.0) is None
    rec.invalidate()
    assert rec.cached(11.0) is None
    with pytest.raises(InvalidInput):
        rec.cache(True, 0.0, ttl=0)


def four_controllers():
    topo = default_topology()
    sc = StubScorer()
    leader = make_state(topo, "SC-OPT", sc, role="leader")
    rest = [make_state(topo, c, sc) for c in ("SC-W1", "SC-W2", "SC-C1")]
    return topo, leader, rest


def test_disjoint_skeletons_become_union():
    topo, leader, rest = four_controllers()
    rest[0].note_skeleton(1.0, 0, "add", 1, (0, 12))
    rest[1].note_skeleton(2.0, 0, "add", 2, (3, 14))
    sync_with_leader(leader, rest, 5.0)
    for c in [leader] + rest:
        assert c.skeletons == {1: (0, 12), 2: (3, 14)}


def test_staggered_updates_match_sequential_replay_oracle():
    topo, leader, rest = four_controllers()
    everyone = [leader] + rest
    rng = np.random.default_rng(4)
    log = []
    seq = 0
    for period in range(3):
        for _ in range(12):
            c = everyone[int(rng.integers(4))]
            tick = period * 50 + float(rng.integers(50))
            lp = int(rng.integers(1, 8))
            op = "add" if rng.random() < 0.7 else "remove"
            links = tuple(sorted(int(x) for x in rng.choice(24, 2, replace=False)))
            c.note_skeleton(tick, seq, op, lp, links)
            log.append((tick, seq, op, lp, links))
            seq += 1
        sync_with_leader(leader, rest, (period + 1) * 50.0)
    expect = {}
    for tick, s, op, lp, links in sorted(log):
        if op == "add":
            expect[lp] = links
        else:
            expect.pop(lp, None)
    for c in everyone:
        assert c.skeletons == expect


def test_sync_copies_no_private_masks_and_relays_evidence():
    topo, leader, rest = four_controllers()
    rest[0].own_masks = {0: np.arange(16)}
    rest[0].observe(KnowledgeTriple("SC-C1", "st:heavy", "bh:corrupt_segment", 3.0, "W1"))
    out = sync_with_leader(leader, rest, 10.0)
    assert out["evidence"] == 3
    for c in [leader] + rest[1:]:
        assert c.own_masks == {}
        assert c.peer_views == {}
        audit_privacy(c, topo)
        assert any(t.origin_domain == "sync:SC-W1" for t in c.kb.triples)


def test_audit_flags_full_foreign_mask():
    topo, leader, rest = four_controllers()
    c1_link = next(l.id for l in topo.links if {topo.node_domain[l.a], topo.node_domain[l.b]} == {"C1"})
    rest[0].peer_views[c1_link] = {s: 0 for s in range(16)}
    with pytest.raises(PrivacyViolation):
        audit_privacy(rest[0], topo)


def test_leader_quarantined_by_half_of_honest_followers():
    topo, leader, rest = four_controllers()
    assert not leader_quarantined(leader, rest)
    rest[0].record("SC-OPT").cache(False, 0.0)
    rest[1].record("SC-OPT").cache(False, 0.0)
    assert leader_quarantined(leader, rest)
    with pytest.raises(LeaderQuarantined):
        sync_with_leader(leader, rest, 1.0)


def test_sync_critical_sections_never_interleave():
    lock = threading.Lock()
    log = []
    groups = [four_controllers() for _ in range(4)]

    def worker(g):
        _, leader, rest = g
        for k in range(5):
            rest[0].note_skeleton(float(k), k, "add", k + 1, (0,))
            sync_with_leader(leader, rest, float(k), lock, log)

    threads = [threading.Thread(target=worker, args=(g,)) for g in groups]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(log) == 40
    for k in range(0, 40, 2):
        assert log[k][0] == "sync-begin" and log[k + 1][0] == "sync-end"


def test_non_leader_cannot_sync():
    topo, leader, rest = four_controllers()
    with pytest.raises(InvalidInput):
        sync_with_leader(rest[0], [leader], 1.0)


def test_auth_message_json_round_trip():
    m = AuthMessage("AUTH_REQ", "SC-W1", 3, {"t": 1.0, "l_loc": "loc:w1a"})
    assert AuthMessage.from_json(m.to_json()) == m
    with pytest.raises(InvalidInput):
        AuthMessage("HELLO", "x", 1, {})
    with pytest.raises(InvalidInput):
        AuthMessage.from_json(m.to_json().replace('"version": 1', '"version": 2'))


def test_phase_token_cycles():
    assert phase_token(0) == "st:phase0"
    assert phase_token(150) == "st:phase1"
    assert phase_token(450) == "st:phase0"
