"""Discrete-event simulation of multi-domain request handling with and without secure control."""

from __future__ import annotations

import heapq
import json
import math
import warnings
from dataclasses import asdict, dataclass, field, fields
from itertools import count
from pathlib import Path
from typing import Sequence

import numpy as np

from . import relation_net as rnet
from .controller import (CACHE_TTL, DEFAULT_TAU, ControllerState, PartialInfo, RedactionPolicy, TrustRecord,
                         build_event_memory, contradictory_fragment, evaluate_peer, loc_token, make_partial_info,
                         phase_token, sync_with_leader, verify_peer, PHASES)
from .errors import ConfigError, DegenerateDataset, LeaderQuarantined
from .fron_topology import Topology, default_topology_dict, topology_from_dict
from .knowledge_base import KnowledgeBase, KnowledgeTriple, rebuild
from .routing import (AUTH_COST, SABOTAGED, SETUP_COST, UNROUTABLE, Blocked, RouteRequest, greedy_route, provision,
                      trusted_domain_graph)

LOAD_STATUSES = ("st:light", "st:moderate", "st:heavy")
PHASE_STATUSES = tuple(f"st:phase{k}" for k in range(PHASES))
NORMAL_BEHAVIORS = ("bh:route", "bh:allocate", "bh:forward", "bh:release", "bh:report")
ABNORMAL_BEHAVIORS = ("bh:falsify_spectrum", "bh:corrupt_segment", "bh:vouch_colluder", "bh:forge_event")
AFFAIRS = ("af:compute", "af:control", "af:sense")
PROFILE_BEHAVIORS = ("falsify_spectrum", "corrupt_segment", "vouch_colluder")

_STREAMS = {"inject": 1, "traffic": 2, "behavior": 3, "loss": 4, "bootstrap": 5, "holdout": 6, "train": 7}


def stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), _STREAMS[name]]))


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MaliciousProfile:
    lie_prob: float = 0.7
    corrupt_prob: float = 0.6
    behaviors: tuple = PROFILE_BEHAVIORS

    def __post_init__(self):
        for name in ("lie_prob", "corrupt_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]", name)
        bad = set(self.behaviors) - set(PROFILE_BEHAVIORS)
        if bad:
            raise ConfigError(f"unknown malicious behaviors {sorted(bad)}", "behaviors")


@dataclass(frozen=True)
class Scenario:
    topology: object = "default"        # "default", a path, or an inline topology dict
    objects: int = 30
    malicious_ratio: float = 0.2
    collusion: bool = False
    load: float = 20.0                  # Erlang
    holding: float = 20.0               # mean holding ticks
    sync_period: int = 50
    seed: int = 0
    duration: float = 2500.0
    blcs: bool = True
    profile: MaliciousProfile = MaliciousProfile()
    requester_domains: tuple = ("W1", "W2")
    leader_domain: str = "OPT"
    width_max: int = 2
    p_loss_mal: float = 0.2
    cache_ttl: float = CACHE_TTL
    tau: float = DEFAULT_TAU
    kb_period: int = 25
    setup_cost: float = SETUP_COST
    auth_cost: float = AUTH_COST
    warmup_frac: float = 0.1
    fragment_slots: int = 4
    epochs: int = 2000
    train_episodes: int = 8
    train_per_episode: int = 50

    def __post_init__(self):
        def bad(name, msg):
            raise ConfigError(f"{name}: {msg}", name)

        if self.topology is None or self.topology == "":
            bad("topology", "missing")
        if not isinstance(self.objects, int) or self.objects < 1:
            bad("objects", "must be a positive integer")
        if not 0.0 <= self.malicious_ratio <= 1.0:
            bad("malicious_ratio", "must lie in [0, 1]")
        if self.load < 0:
            bad("load", "must be >= 0")
        if self.holding < 1:
            bad("holding", "must be >= 1")
        if self.sync_period < 1:
            bad("sync_period", "must be >= 1")
        if self.kb_period < 1:
            bad("kb_period", "must be >= 1")
        if not 0.0 <= self.warmup_frac < 1.0:
            bad("warmup_frac", "must lie in [0, 1)")
        if self.duration <= 0 or self.duration <= self.warmup:
            bad("duration", "must exceed the warmup")
        if self.width_max < 1:
            bad("width_max", "must be >= 1")
        if not 0.0 <= self.p_loss_mal <= 1.0:
            bad("p_loss_mal", "must lie in [0, 1]")
        if self.cache_ttl <= 0:
            bad("cache_ttl", "must be positive")
        if not 0.0 <= self.tau <= 1.0:
            bad("tau", "must lie in [0, 1]")
        if self.epochs < 1 or self.train_episodes < 1 or self.train_per_episode < 1:
            bad("epochs", "training sizes must be positive")
        if self.fragment_slots < 0:
            bad("fragment_slots", "must be >= 0")

    @property
    def warmup(self) -> float:
        return self.warmup_frac * self.duration

    def replace(self, **kw) -> "Scenario":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return Scenario(**d)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["profile"] = asdict(self.profile)
        d["profile"]["behaviors"] = list(self.profile.behaviors)
        d["requester_domains"] = list(self.requester_domains)
        return d


def scenario_from_dict(d: dict, base_dir: Path | None = None) -> Scenario:
    if not isinstance(d, dict):
        raise ConfigError("scenario must be a JSON object", None)
    if "topology" not in d:
        raise ConfigError("topology: missing", "topology")
    known = {f.name for f in fields(Scenario)}
    extra = set(d) - known
    if extra:
        name = sorted(extra)[0]
        raise ConfigError(f"{name}: unknown field", name)
    kw = dict(d)
    if "profile" in kw:
        p = kw["profile"]
        if not isinstance(p, dict):
            raise ConfigError("profile: must be an object", "profile")
        try:
            kw["profile"] = MaliciousProfile(**{k: (tuple(v) if k == "behaviors" else v) for k, v in p.items()})
        except TypeError as e:
            raise ConfigError(f"profile: {e}", "profile") from None
    if "requester_domains" in kw:
        kw["requester_domains"] = tuple(kw["requester_domains"])
    topo = kw["topology"]
    if isinstance(topo, str) and topo != "default" and base_dir is not None and not Path(topo).is_absolute():
        kw["topology"] = str(base_dir / topo)
    for name in ("objects", "sync_period", "kb_period", "seed", "width_max", "epochs", "train_episodes",
                 "train_per_episode", "fragment_slots"):
        if name in kw and not (isinstance(kw[name], int) and not isinstance(kw[name], bool)):
            raise ConfigError(f"{name}: must be an integer", name)
    try:
        return Scenario(**kw)
    except TypeError as e:
        raise ConfigError(str(e), None) from None


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})", None) from None
    return scenario_from_dict(d, path.parent)


def build_topology(sc: Scenario) -> Topology:
    src = sc.topology
    if src == "default":
        d = default_topology_dict()
    elif isinstance(src, dict):
        d = src
    else:
        try:
            d = json.loads(Path(src).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"topology: cannot read {src} ({e})", "topology") from None
    topo = topology_from_dict(d)
    for name in sc.requester_domains:
        if name not in topo.domains:
            raise ConfigError(f"requester_domains: unknown domain {name}", "requester_domains")
    if sc.leader_domain not in topo.domains:
        raise ConfigError(f"leader_domain: unknown domain {sc.leader_domain}", "leader_domain")
    if not any(d.kind == "computing" for d in topo.domains.values()):
        raise ConfigError("topology: no computing domain to serve requests", "topology")
    return topo


# --------------------------------------------------------------------------
# malicious controllers
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Assignment:
    malicious: frozenset
    collusion: bool

    def is_malicious(self, controller: str) -> bool:
        return controller in self.malicious


def malicious_count(n: int, ratio: float, u: float) -> int:
    """floor(ratio * n + u) with a per-seed dither u in [0, 1)."""
    return int(math.floor(ratio * n + u + 1e-12))


def inject_malicious(controllers: Sequence[str], ratio: float, collusion: bool = False, seed: int = 0,
                     eligible: Sequence[str] | None = None) -> Assignment:
    """Seeded uniform choice of malicious controllers.

    The count is ``floor(ratio * n + u)`` over all ``n`` controllers, with
    ``u`` drawn once per seed; it is capped by the number of ``eligible``
    controllers.  For one seed the chosen sets are nested in ``ratio``.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError("malicious_ratio must lie in [0, 1]", "malicious_ratio")
    controllers = sorted(controllers)
    pool = sorted(eligible) if eligible is not None else controllers
    rng = stream(seed, "inject")
    u = float(rng.random())
    order = [pool[i] for i in rng.permutation(len(pool))]
    k = min(malicious_count(len(controllers), ratio, u), len(pool))
    return Assignment(frozenset(order[:k]), bool(collusion))


def eligible_controllers(topo: Topology, sc: Scenario) -> list[str]:
    return sorted(topo.controller_of(d) for d in topo.domains if d not in sc.requester_domains)


# --------------------------------------------------------------------------
# relation model bootstrap
# --------------------------------------------------------------------------


def vocabulary(topo: Topology) -> list[str]:
    ctrl = [topo.controller_of(d) for d in topo.domains]
    locs = [loc_token(n) for n in topo.node_domain]
    return sorted(set(ctrl) | set(locs) | set(LOAD_STATUSES) | set(PHASE_STATUSES) | set(NORMAL_BEHAVIORS)
                  | set(ABNORMAL_BEHAVIORS) | set(AFFAIRS))


def _abnormal_tokens(profile: MaliciousProfile) -> list[str]:
    toks = [f"bh:{b}" for b in profile.behaviors]
    return sorted(set(toks) | {"bh:forge_event"})


def observed_triples(rng: np.random.Generator, controller: str, malicious: bool, profile: MaliciousProfile,
                     size: int) -> tuple:
    out = []
    abnormal = _abnormal_tokens(profile)
    for _ in range(size):
        st = LOAD_STATUSES[int(rng.integers(len(LOAD_STATUSES)))]
        if malicious and rng.random() < profile.lie_prob:
            bh = abnormal[int(rng.integers(len(abnormal)))]
        else:
            bh = NORMAL_BEHAVIORS[int(rng.integers(len(NORMAL_BEHAVIORS)))]
        out.append((controller, st, bh))
    return tuple(out)


def bootstrap_samples(topo: Topology, sc: Scenario, rng: np.random.Generator, episodes: int | None = None,
                      per_episode: int | None = None) -> list[rnet.TrainSample]:
    """Labeled interaction samples: 1-3 observed triples of one controller.

    A sample is labeled 0 when any of its triples records an attack (which
    only malicious controllers emit, with probability ``lie_prob`` per
    triple) and 1 otherwise.  Every episode draws a fresh malicious
    assignment, so controller names carry no stable signal.
    """
    episodes = sc.train_episodes if episodes is None else episodes
    per_episode = sc.train_per_episode if per_episode is None else per_episode
    ctrls = sorted(topo.controller_of(d) for d in topo.domains)
    pool = eligible_controllers(topo, sc)
    out = []
    for _ in range(episodes):
        u = float(rng.random())
        k = min(malicious_count(len(ctrls), sc.malicious_ratio, u), len(pool))
        bad = set(pool[i] for i in rng.permutation(len(pool))[:k])
        for _ in range(per_episode):
            c = ctrls[int(rng.integers(len(ctrls)))]
            size = int(rng.integers(1, 4))
            trip = observed_triples(rng, c, c in bad, sc.profile, size)
            attack = any(t[2] in ABNORMAL_BEHAVIORS for t in trip)
            out.append(rnet.TrainSample(trip, 0 if attack else 1))
    return out


@dataclass
class TrainReport:
    rn: rnet.RnParams
    enc: rnet.EncoderParams
    losses: list
    heldout_accuracy: float
    honest_acceptance: float
    degenerate: bool

    @property
    def final_loss(self) -> float:
        return float(self.losses[-1])


def honest_acceptance(rn, enc, samples, tau: float) -> float:
    honest = [s for s in samples if s.label == 1]
    if not honest:
        return float("nan")
    p = rnet.predict(rn, enc, honest)
    return float(np.mean(p >= tau))


def train_model(sc: Scenario, topo: Topology | None = None) -> TrainReport:
    """Bootstrap labeled interactions for ``sc`` and fit the relation network."""
    topo = topo or build_topology(sc)
    data = bootstrap_samples(topo, sc, stream(sc.seed, "bootstrap"))
    held = bootstrap_samples(topo, sc, stream(sc.seed, "holdout"))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DegenerateDataset)
        res = rnet.train(data, epochs=sc.epochs, seed=sc.seed, vocab=vocabulary(topo))
    for w in caught:
        warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
    acc = rnet.accuracy(res.rn, res.encoder, held)
    ha = honest_acceptance(res.rn, res.encoder, held, sc.tau)
    return TrainReport(res.rn, res.encoder, res.losses, acc, ha, res.degenerate)


_MODEL_CACHE: dict = {}


def training_key(sc: Scenario) -> str:
    keys = ("topology", "malicious_ratio", "seed", "epochs", "train_episodes", "train_per_episode",
            "requester_domains")
    d = {k: getattr(sc, k) for k in keys}
    d["requester_domains"] = list(sc.requester_domains)
    d["profile"] = asdict(sc.profile)
    d["profile"]["behaviors"] = list(sc.profile.behaviors)
    return json.dumps(d, sort_keys=True, default=str)


def model_for(sc: Scenario, topo: Topology | None = None):
    """Trained (rn, encoder) for ``sc``, reused across runs that share training settings."""
    key = training_key(sc)
    hit = _MODEL_CACHE.get(key)
    if hit is None:
        rep = train_model(sc, topo)
        hit = _MODEL_CACHE[key] = (rep.rn, rep.enc)
    return hit


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------

METRIC_NAMES = ("mistrust_rate", "latency_ticks", "packet_loss", "blocking")


@dataclass
class MetricsReport:
    mistrust_rate: float = 0.0
    latency_ticks: float = 0.0
    packet_loss: float = 0.0
    blocking: float = 0.0
    requests: int = 0
    admitted: int = 0
    blocked: int = 0
    interactions: int = 0
    malicious_interactions: int = 0
    offered_units: int = 0
    lost_units: int = 0
    auth_rounds: int = 0
    blocked_reasons: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    ci: dict = field(default_factory=dict)
    runs: int = 1

    def metric(self, name: str) -> float:
        return float(getattr(self, name))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["blocked_reasons"] = dict(sorted(self.blocked_reasons.items()))
        return d


def compute_metrics(trace: Sequence[dict], sc: Scenario) -> MetricsReport:
    """Recount the four headline metrics from the request records after warmup."""
    rep = MetricsReport()
    warm = sc.warmup
    lat = 0.0
    for rec in trace:
        if rec.get("ev") != "request" or rec["t"] < warm:
            continue
        rep.requests += 1
        for _, bad in rec.get("interactions", ()):
            rep.interactions += 1
            rep.malicious_interactions += int(bool(bad))
        rep.auth_rounds += int(rec.get("rounds", 0))
        if rec["admitted"]:
            rep.admitted += 1
            lat += rec["latency"]
            rep.offered_units += rec["units"]
            rep.lost_units += rec["lost"]
        else:
            rep.blocked += 1
            r = rec["reason"]
            rep.blocked_reasons[r] = rep.blocked_reasons.get(r, 0) + 1
    if rep.requests:
        rep.blocking = rep.blocked / rep.requests
    else:
        rep.flags.append("no_requests")
    if rep.admitted:
        rep.latency_ticks = lat / rep.admitted
    else:
        rep.flags.append("no_admitted")
    if rep.interactions:
        rep.mistrust_rate = rep.malicious_interactions / rep.interactions
    else:
        rep.flags.append("no_interactions")
    if rep.offered_units:
        rep.packet_loss = rep.lost_units / rep.offered_units
    return rep


def aggregate(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Mean over seeds with 95% normal-approximation half-widths in ``ci``."""
    if not reports:
        raise ValueError("nothing to aggregate")
    out = MetricsReport(runs=len(reports))
    for name in METRIC_NAMES:
        xs = np.array([r.metric(name) for r in reports], dtype=np.float64)
        setattr(out, name, float(xs.mean()))
        out.ci[name] = float(1.96 * xs.std(ddof=1) / math.sqrt(len(xs))) if len(xs) > 1 else 0.0
    for name in ("requests", "admitted", "blocked", "interactions", "malicious_interactions", "offered_units",
                 "lost_units", "auth_rounds"):
        setattr(out, name, int(sum(getattr(r, name) for r in reports)))
    reasons: dict = {}
    for r in reports:
        for k, v in r.blocked_reasons.items():
            reasons[k] = reasons.get(k, 0) + v
    out.blocked_reasons = dict(sorted(reasons.items()))
    out.flags = sorted({f for r in reports for f in r.flags})
    return out


# --------------------------------------------------------------------------
# event loop
# --------------------------------------------------------------------------


@dataclass
class RunResult:
    report: MetricsReport
    trace: list
    assignment: Assignment
    controllers: dict = field(default_factory=dict, repr=False)
    topology: Topology | None = field(default=None, repr=False)

    def trace_lines(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.trace)


class _Simulation:
    def __init__(self, sc: Scenario, model=None, topo: Topology | None = None):
        self.sc = sc
        self.topo = topo or build_topology(sc)
        topo = self.topo
        self.ctrl_of = {d: topo.controller_of(d) for d in topo.domains}
        ctrls = sorted(self.ctrl_of.values())
        self.assignment = inject_malicious(ctrls, sc.malicious_ratio, sc.collusion, sc.seed,
                                           eligible_controllers(topo, sc))
        self.trace: list[dict] = []
        self.queue: list = []
        self.seq = count()
        self.rng_traffic = stream(sc.seed, "traffic")
        self.rng_beh = stream(sc.seed, "behavior")
        self.rng_loss = stream(sc.seed, "loss")
        self.nonce = count(1)
        self.lp_ids = count(1)
        self.req_ids = count(1)
        self.scorer = None
        mem = None
        if sc.blcs:
            rn, enc = model if model is not None else model_for(sc, topo)
            self.scorer = rnet.RelationScorer(rn, enc)
            mem = build_event_memory(topo, self.scorer, AFFAIRS)
        colluders = self.assignment.malicious if sc.collusion else frozenset()
        self.states: dict[str, ControllerState] = {}
        for d, c in sorted(self.ctrl_of.items()):
            kb = KnowledgeBase(ctrls, LOAD_STATUSES, NORMAL_BEHAVIORS + ABNORMAL_BEHAVIORS)
            bad = self.assignment.is_malicious(c)
            st = ControllerState(
                id=c, domain=d, kb=kb, mem=mem, scorer=self.scorer,
                role="leader" if d == sc.leader_domain else "receiver",
                honest=not bad, colluders=colluders if bad else frozenset(), tau=sc.tau)
            st.own_masks = {l.id: l.spectrum.owners for l in topo.domain_links(d)}
            self.states[c] = st
        self.kb_revision = {c: -1 for c in self.states}
        wireless = [n for d in sorted(sc.requester_domains) for n in topo.domains[d].nodes]
        self.object_nodes = [wireless[k % len(wireless)] for k in range(sc.objects)]
        self.compute_nodes = sorted(n for d in topo.domains.values() if d.kind == "computing" for n in d.nodes)
        self.pending_loss: dict[int, tuple] = {}

    # -- helpers --------------------------------------------------------

    def push(self, t: float, kind: str, payload=None) -> None:
        heapq.heappush(self.queue, (t, next(self.seq), kind, payload))

    def status_of(self, domain: str) -> str:
        links = self.topo.domain_links(domain)
        if not links:
            return LOAD_STATUSES[0]
        u = float(np.mean([np.count_nonzero(l.spectrum.owners) / self.topo.slots for l in links]))
        return LOAD_STATUSES[0] if u < 0.3 else LOAD_STATUSES[1] if u < 0.7 else LOAD_STATUSES[2]

    def observe(self, state: ControllerState, peer: str, behavior: str, t: float) -> None:
        d = self.topo.controller_domain[peer]
        state.observe(KnowledgeTriple(peer, self.status_of(d), behavior, t, state.domain))

    # -- authentication -------------------------------------------------

    def partial_info_from(self, peer: ControllerState, t: float):
        topo, rng = self.topo, self.rng_beh
        nonce = next(self.nonce)
        nodes = topo.domains[peer.domain].nodes
        node = nodes[int(rng.integers(len(nodes)))]
        affair = AFFAIRS[int(rng.integers(len(AFFAIRS)))]
        own = sorted(peer.own_masks)
        lying = (not peer.honest) and rng.random() < self.sc.profile.lie_prob
        if lying:
            modes = ["forge_event"]
            if "falsify_spectrum" in self.sc.profile.behaviors and len(own) >= 2:
                modes.append("falsify_spectrum")
            mode = modes[int(rng.integers(len(modes)))]
            if mode == "falsify_spectrum":
                links = [own[i] for i in sorted(rng.choice(len(own), 2, replace=False))]
                frag, skel = contradictory_fragment(links, topo.slots, 10**9 + nonce, int(rng.integers(topo.slots)))
                return PartialInfo(peer.id, nonce, t, loc_token(node), affair, None, frag, skel), mode
            others = sorted(n for n in topo.node_domain if topo.node_domain[n] != peer.domain)
            node = others[int(rng.integers(len(others)))]
            return PartialInfo(peer.id, nonce, t, loc_token(node), affair), mode
        from .knowledge_base import EventInfo
        ev = EventInfo(f"ev{nonce}", t, loc_token(node), affair)
        k = min(self.sc.fragment_slots, topo.slots - 1)
        links = tuple(own[:2]) if k and own else ()
        policy = RedactionPolicy(fragment_slots=k if links else 0, fragment_links=links)
        lps = {lp.id: lp.links for lp in topo.lightpaths.values()}
        return make_partial_info(peer, ev, policy, nonce, rng, lps), "honest"

    def authenticate(self, req_state: ControllerState, peer_id: str, t: float):
        peer = self.states[peer_id]
        info, mode = self.partial_info_from(peer, t)
        verdict = verify_peer(req_state, info, slots=self.topo.slots)
        for link, row in info.fragment.items():
            req_state.peer_views[link] = dict(row)
        hist = req_state.peer_history(peer_id)
        hist.claims.append(verdict.reason not in ("inconsistent-spectrum", "handler-mismatch", "low-confidence"))
        hist.replies.append(True)
        if not verdict.trusted:
            if verdict.reason == "inconsistent-spectrum":
                self.observe(req_state, peer_id, "bh:falsify_spectrum", t)
            elif verdict.reason in ("handler-mismatch", "low-confidence"):
                self.observe(req_state, peer_id, "bh:forge_event", t)
        evaluate_peer(req_state, peer_id)
        self.trace.append({"ev": "auth", "t": t, "requester": req_state.id, "peer": peer_id, "nonce": info.nonce,
                           "trusted": verdict.trusted, "reason": verdict.reason, "claim": mode})
        return verdict

    def trust_peers(self, state: ControllerState, t: float) -> tuple[set, int]:
        """Refresh stale trust entries; returns (distrusted domains, rounds performed)."""
        rounds = 0
        distrusted = set()
        for d in sorted(self.ctrl_of):
            if d == state.domain:
                continue
            peer = self.ctrl_of[d]
            rec = state.record(peer)
            c = rec.cached(t)
            if c is None:
                vt = state.vouches.get(peer)
                fresh = vt is not None and t - vt < self.sc.cache_ttl
                if fresh and not state.kb.isbrn.abnormal_behaviors(peer):
                    rec.cache(True, t, self.sc.cache_ttl)
                    c = True
                    self.trace.append({"ev": "vouch", "t": t, "requester": state.id, "peer": peer, "accepted": True})
                else:
                    if fresh:
                        self.trace.append({"ev": "vouch", "t": t, "requester": state.id, "peer": peer,
                                           "accepted": False})
                    rounds += 1
                    v = self.authenticate(state, peer, t)
                    rec.cache(v.trusted, t, self.sc.cache_ttl)
                    rec.verdicts.append(v.trusted)
                    c = v.trusted
            if not c:
                distrusted.add(d)
        return distrusted, rounds

    # -- requests -------------------------------------------------------

    def on_arrival(self, t: float) -> None:
        sc, topo, rng = self.sc, self.topo, self.rng_traffic
        rid = next(self.req_ids)
        src = self.object_nodes[int(rng.integers(len(self.object_nodes)))]
        width = int(rng.integers(1, sc.width_max + 1))
        holding = max(1.0, float(rng.exponential(sc.holding)))
        pref = self.compute_nodes[int(rng.integers(len(self.compute_nodes)))]
        gap = float(rng.exponential(sc.holding / sc.load))
        if t + gap < sc.duration:
            self.push(t + gap, "arrival")
        src_dom = topo.node_domain[src]
        state = self.states[self.ctrl_of[src_dom]]
        req = RouteRequest(rid, src, pref, width, t, holding)
        if sc.blcs:
            distrusted, rounds = self.trust_peers(state, t)
        else:
            distrusted, rounds = set(), 0
        pdom = topo.node_domain[pref]
        dests = [pref] + sorted((n for n in self.compute_nodes if n != pref),
                                key=lambda n: (topo.node_domain[n] != pdom, n))
        plan, reasons = None, []
        for dst in dests:
            ddom = topo.node_domain[dst]
            graph = trusted_domain_graph(topo, src_dom, distrusted, src_dom, ddom)
            if isinstance(graph, Blocked):
                reasons.append(graph.reason)
                continue
            r = RouteRequest(rid, src, dst, width, t, holding)
            res = greedy_route(graph, r)
            if isinstance(res, Blocked):
                reasons.append(res.reason)
                continue
            plan, req = res, r
            break
        rec = {"ev": "request", "id": rid, "t": t, "src": src, "dst": req.destination, "width": width,
               "holding": holding, "requester": state.id, "rounds": rounds, "interactions": [],
               "admitted": False, "reason": None, "latency": None, "units": 0, "lost": 0}
        if plan is None:
            for r in ("NoSpectrum", "NoPath", UNROUTABLE):
                if r in reasons:
                    rec["reason"] = r
                    break
            self.trace.append(rec)
            return
        foreign = [d for d in dict.fromkeys(plan.domains) if d != src_dom]
        auth_rounds = rounds if sc.blcs else len(foreign)
        plan.authenticated = frozenset(self.ctrl_of[d] for d in foreign)
        out = provision(plan, topo, req, next(self.lp_ids), auth_rounds, sc.setup_cost, sc.auth_cost)
        if isinstance(out, Blocked):
            rec["reason"] = out.reason
            self.trace.append(rec)
            return
        lp, latency = out
        self.trace.append({"ev": "plan", "t": t, "id": rid, "lightpath": lp.id, **plan.to_dict()})
        bad_doms = [d for d in foreign if self.assignment.is_malicious(self.ctrl_of[d])]
        rec["interactions"] = [[self.ctrl_of[d], d in bad_doms] for d in foreign]
        rec["rounds"] = auth_rounds
        seq = next(self.seq)
        for d in plan.domains:
            self.states[self.ctrl_of[d]].note_skeleton(t, seq, "add", lp.id, lp.links)
        self.push(t + holding, "release", (lp.id, rid, src_dom, tuple(foreign)))
        saboteur = None
        if "corrupt_segment" in sc.profile.behaviors:
            for d in bad_doms:
                if self.rng_beh.random() < sc.profile.corrupt_prob:
                    saboteur = d
                    break
        if saboteur is not None:
            rec["reason"] = SABOTAGED
            rec["saboteur"] = self.ctrl_of[saboteur]
            if sc.blcs:
                peer = self.ctrl_of[saboteur]
                self.observe(state, peer, "bh:corrupt_segment", t)
                state.peer_history(peer).segments.append(False)
                state.record(peer).invalidate()
            self.trace.append(rec)
            return
        units = max(1, int(round(holding)))
        k = len(bad_doms)
        lost = int(self.rng_loss.binomial(units, 1.0 - (1.0 - sc.p_loss_mal) ** k)) if k else 0
        rec.update(admitted=True, latency=latency, units=units, lost=lost)
        self.pending_loss[lp.id] = (lost, bad_doms)
        self.trace.append(rec)

    def on_release(self, t: float, payload) -> None:
        lp_id, rid, src_dom, foreign = payload
        lp = self.topo.lightpaths[lp_id]
        doms = sorted({self.topo.node_domain[n] for l in lp.links for n in (self.topo.links[l].a, self.topo.links[l].b)})
        self.topo.release(lp_id)
        seq = next(self.seq)
        for d in doms:
            self.states[self.ctrl_of[d]].note_skeleton(t, seq, "remove", lp_id)
        loss = self.pending_loss.pop(lp_id, None)
        self.trace.append({"ev": "release", "t": t, "id": rid, "lightpath": lp_id})
        if loss is None or not self.sc.blcs:
            return
        lost, bad_doms = loss
        state = self.states[self.ctrl_of[src_dom]]
        for d in foreign:
            peer = self.ctrl_of[d]
            faulty = lost > 0 and d in bad_doms
            state.peer_history(peer).segments.append(not faulty)
            if faulty:
                self.observe(state, peer, "bh:corrupt_segment", t)
                state.record(peer).invalidate()
            else:
                self.observe(state, peer, "bh:forward", t)

    def on_sync(self, t: float) -> None:
        leader = self.states[self.ctrl_of[self.sc.leader_domain]]
        others = [s for c, s in sorted(self.states.items()) if c != leader.id]
        try:
            moved = sync_with_leader(leader, others, t)
            self.trace.append({"ev": "sync", "t": t, **moved})
        except LeaderQuarantined:
            self.trace.append({"ev": "sync", "t": t, "quarantined": leader.id})
            for s in self.states.values():
                s.pending_skeletons = []
                s.outbox = []

    def on_kb(self, t: float) -> None:
        for c, s in sorted(self.states.items()):
            if s.kb.revision != self.kb_revision[c]:
                rebuild(s.kb, self.scorer)
                self.kb_revision[c] = s.kb.revision

    def run(self) -> RunResult:
        sc = self.sc
        if sc.load > 0:
            self.push(float(self.rng_traffic.exponential(sc.holding / sc.load)), "arrival")
        if sc.blcs:
            k = 1
            while k * sc.kb_period < sc.duration:
                self.push(float(k * sc.kb_period), "kb")
                k += 1
            k = 1
            while k * sc.sync_period < sc.duration:
                self.push(float(k * sc.sync_period), "sync")
                k += 1
        while self.queue:
            t, _, kind, payload = heapq.heappop(self.queue)
            if kind == "arrival":
                self.on_arrival(t)
            elif kind == "release":
                self.on_release(t, payload)
            elif kind == "sync":
                self.on_sync(t)
            else:
                self.on_kb(t)
        report = compute_metrics(self.trace, sc)
        return RunResult(report, self.trace, self.assignment, self.states, self.topo)


def run(sc: Scenario, model=None) -> RunResult:
    """Simulate ``sc`` once; ``model`` is a trained (rn, encoder) pair (trained on demand when omitted)."""
    return _Simulation(sc, model).run()


# --------------------------------------------------------------------------
# sweeps and output files
# --------------------------------------------------------------------------

SWEEP_PARAMS = ("load", "malicious_ratio")
CSV_HEADER = ("sweep_param", "value", "variant") + METRIC_NAMES + tuple(f"ci_{m}" for m in METRIC_NAMES)


@dataclass(frozen=True)
class SweepSpec:
    param: str
    values: tuple
    seeds: int = 20
    baseline: bool = True

    def __post_init__(self):
        if self.param not in SWEEP_PARAMS:
            raise ConfigError(f"sweep param must be one of {SWEEP_PARAMS}", "param")
        if not self.values:
            raise ConfigError("sweep values must be non-empty", "values")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ConfigError("sweep values must be strictly increasing", "values")
        if self.seeds < 1:
            raise ConfigError("seeds must be >= 1", "seeds")


@dataclass
class SweepRow:
    param: str
    value: float
    variant: str
    report: MetricsReport

    def csv_fields(self) -> list[str]:
        r = self.report
        out = [self.param, repr(float(self.value)), self.variant]
        out += [repr(r.metric(m)) for m in METRIC_NAMES]
        out += [repr(float(r.ci.get(m, 0.0))) for m in METRIC_NAMES]
        return out


def variant_name(blcs: bool) -> str:
    return "BLCS" if blcs else "baseline"


def run_point(base: Scenario, param: str, value: float, seeds: int, blcs: bool, model=None) -> MetricsReport:
    reports = []
    for k in range(seeds):
        sc = base.replace(**{param: value, "seed": base.seed + k, "blcs": blcs})
        reports.append(run(sc, model).report)
    return aggregate(reports)


def sweep(base: Scenario, spec: SweepSpec, model=None, workers: int = 1) -> list[SweepRow]:
    """One aggregated row per (point, variant); rows sorted by point then variant."""
    if model is None:
        model = model_for(base)
    variants = [True, False] if spec.baseline else [True]
    jobs = [(float(v), b) for v in spec.values for b in variants]

    def job(vb):
        v, b = vb
        return SweepRow(spec.param, v, variant_name(b), run_point(base, spec.param, v, spec.seeds, b, model))

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(workers) as ex:
            rows = list(ex.map(job, jobs))
    else:
        rows = [job(j) for j in jobs]
    rows.sort(key=lambda r: (r.value, r.variant))
    return rows


def csv_text(rows: Sequence[SweepRow]) -> str:
    lines = [",".join(CSV_HEADER)]
    lines += [",".join(r.csv_fields()) for r in rows]
    return "\n".join(lines) + "\n"


def read_csv(text: str) -> list[dict]:
    """Parse metrics CSV text back into typed rows."""
    import csv
    import io

    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        row = {"sweep_param": rec["sweep_param"], "value": float(rec["value"]), "variant": rec["variant"]}
        for k in CSV_HEADER[3:]:
            row[k] = float(rec[k])
        rows.append(row)
    return rows
