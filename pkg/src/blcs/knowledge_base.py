"""Identification/status/behavior knowledge bases and the relational graph built on them."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import InvalidInput, UnknownEntity

DEFAULT_RHO = 0.5


@dataclass(frozen=True, order=True)
class KnowledgeTriple:
    identification: str
    status: str
    behavior: str
    timestamp: float = 0.0
    origin_domain: str = ""

    @property
    def tokens(self) -> tuple[str, str, str]:
        return (self.identification, self.status, self.behavior)


@dataclass(frozen=True)
class EventInfo:
    """A physical event: private identifier, time, location token, affair type."""

    P_id: str
    t: float
    l_loc: str
    a_type: str

    def __post_init__(self):
        if self.P_id in (None, "") or self.l_loc in (None, "") or self.a_type in (None, "") or self.t is None:
            raise InvalidInput("EventInfo needs all four fields")


@dataclass(frozen=True)
class IsbEdge:
    a: str
    b: str
    weight: float
    relation: tuple  # g output of the triple that produced the edge


@dataclass
class IsbRn:
    """Identification-status-behavior relational graph.

    ``verdicts`` maps (identification, behavior) to [trusted, malicious]
    counts gathered from every scored triple, including the ones too weak to
    become edges.
    """

    entities: frozenset = frozenset()
    edges: dict = field(default_factory=dict)
    version: int = 0
    rho: float = DEFAULT_RHO
    roles: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)
    _adj: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        adj: dict[str, list[tuple[str, float]]] = {}
        for (a, b), e in self.edges.items():
            if a not in self.entities or b not in self.entities:
                raise InvalidInput(f"edge {a}-{b} touches an unregistered entity")
            adj.setdefault(a, []).append((b, e.weight))
            adj.setdefault(b, []).append((a, e.weight))
        for k in adj:
            adj[k].sort(key=lambda nw: (-nw[1], nw[0]))
        self._adj = adj

    def edge_set(self) -> set[tuple[str, str]]:
        return set(self.edges)

    def neighbors(self, entity: str) -> list[tuple[str, float]]:
        return list(self._adj.get(entity, ()))

    def abnormal_behaviors(self, identification: str) -> list[str]:
        """Behaviors of ``identification`` whose recorded verdicts are mostly malicious."""
        out = []
        for (i, b), (good, bad) in self.verdicts.items():
            if i == identification and bad > good:
                out.append(b)
        return sorted(out)

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "rho": self.rho,
            "entities": sorted(self.entities),
            "roles": dict(sorted(self.roles.items())),
            "edges": [{"a": a, "b": b, "weight": e.weight, "relation": list(e.relation)}
                      for (a, b), e in sorted(self.edges.items())],
            "verdicts": [{"identification": i, "behavior": b, "trusted": c[0], "malicious": c[1]}
                         for (i, b), c in sorted(self.verdicts.items())],
        }


def _pair(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


class KnowledgeBase:
    """Per-controller store of knowledge triples over registered vocabularies."""

    def __init__(self, identifications: Iterable[str] = (), statuses: Iterable[str] = (),
                 behaviors: Iterable[str] = ()):
        self.I: set[str] = set(identifications)
        self.S: set[str] = set(statuses)
        self.B: set[str] = set(behaviors)
        self.triples: list[KnowledgeTriple] = []
        self._seen: set[KnowledgeTriple] = set()
        self._last_ts: dict[str, float] = {}
        self.isbrn = IsbRn()
        self.rebuilds = 0
        self._counts: dict[tuple[str, str, str], int] = {}
        self.revision = 0  # bumped on every accepted insert

    def register(self, identifications=(), statuses=(), behaviors=()) -> None:
        self.I.update(identifications)
        self.S.update(statuses)
        self.B.update(behaviors)

    def __len__(self) -> int:
        return len(self.triples)

    def insert(self, triple: KnowledgeTriple) -> bool:
        """Append ``triple``; returns False for an exact duplicate."""
        for tok, vocab, role in ((triple.identification, self.I, "identification"),
                                 (triple.status, self.S, "status"),
                                 (triple.behavior, self.B, "behavior")):
            if tok not in vocab:
                raise UnknownEntity(f"{role} token {tok!r} is not registered")
        if triple in self._seen:
            return False
        last = self._last_ts.get(triple.origin_domain)
        if last is not None and triple.timestamp < last:
            raise InvalidInput(f"timestamp {triple.timestamp} precedes {last} for origin {triple.origin_domain!r}")
        self._last_ts[triple.origin_domain] = triple.timestamp
        self._seen.add(triple)
        self.triples.append(triple)
        self._counts[triple.tokens] = self._counts.get(triple.tokens, 0) + 1
        self.revision += 1
        return True

    def token_counts(self) -> dict[tuple[str, str, str], int]:
        return dict(self._counts)

    def dump(self) -> dict:
        return {
            "identifications": sorted(self.I),
            "statuses": sorted(self.S),
            "behaviors": sorted(self.B),
            "triples": [{"identification": t.identification, "status": t.status, "behavior": t.behavior,
                         "timestamp": t.timestamp, "origin_domain": t.origin_domain} for t in self.triples],
            "isbrn": self.isbrn.to_dict(),
        }

    @classmethod
    def load(cls, d: dict) -> "KnowledgeBase":
        kb = cls(d["identifications"], d["statuses"], d["behaviors"])
        for t in d["triples"]:
            kb.insert(KnowledgeTriple(**t))
        return kb

    def dumps(self) -> str:
        return json.dumps(self.dump(), sort_keys=True)


def insert_triple(kb: KnowledgeBase, triple: KnowledgeTriple) -> KnowledgeBase:
    kb.insert(triple)
    return kb


def build_isb_rn(kb: KnowledgeBase, scorer, rho: float = DEFAULT_RHO, version: int | None = None) -> IsbRn:
    """Score every distinct observed triple and connect its entities.

    ``scorer`` needs ``score(triple)`` and ``relation_vector(triple)``
    (see :class:`blcs.relation_net.RelationScorer`).  A triple scoring at
    least ``rho`` links i-s, i-b and s-b; each pair keeps its strongest
    triple.
    """
    if not 0.0 < rho <= 1.0:
        raise InvalidInput("rho must lie in (0, 1]")
    roles = {}
    for tok in kb.I:
        roles[tok] = "identification"
    for tok in kb.S:
        roles.setdefault(tok, "status")
    for tok in kb.B:
        roles.setdefault(tok, "behavior")
    edges: dict[tuple[str, str], IsbEdge] = {}
    verdicts: dict[tuple[str, str], list[int]] = {}
    for tokens, count in sorted(kb.token_counts().items()):
        i, s, b = tokens
        score = float(scorer.score(tokens))
        v = verdicts.setdefault((i, b), [0, 0])
        v[0 if score >= 0.5 else 1] += count
        if score < rho:
            continue
        rel = tuple(float(x) for x in np.asarray(scorer.relation_vector(tokens)))
        for a, c in ((i, s), (i, b), (s, b)):
            key = _pair(a, c)
            old = edges.get(key)
            if old is None or score > old.weight:
                edges[key] = IsbEdge(key[0], key[1], score, rel)
    entities = frozenset(kb.I | kb.S | kb.B)
    if version is None:
        version = kb.isbrn.version + 1
    return IsbRn(entities, edges, version, rho, roles, {k: tuple(v) for k, v in verdicts.items()})


def rebuild(kb: KnowledgeBase, scorer, rho: float = DEFAULT_RHO) -> IsbRn:
    kb.isbrn = build_isb_rn(kb, scorer, rho)
    kb.rebuilds += 1
    return kb.isbrn


def periodic_update(kb: KnowledgeBase, snapshot: Iterable[KnowledgeTriple], period: int, tick: int,
                    scorer, rho: float = DEFAULT_RHO) -> bool:
    """Fold a network snapshot into ``kb`` when ``tick`` is a multiple of ``period``.

    Returns True when a rebuild happened; off-period ticks leave ``kb``
    untouched (the snapshot is not consumed).
    """
    if period < 1:
        raise InvalidInput("period must be >= 1")
    if tick % period != 0:
        return False
    for t in snapshot:
        kb.insert(t)
    rebuild(kb, scorer, rho)
    return True


def query_relations(isbrn: IsbRn, entity: str) -> list[tuple[str, float]]:
    """Neighbors of ``entity`` by descending weight, ties by token order."""
    return isbrn.neighbors(entity)


def associate(isbrn: IsbRn, start: str, max_depth: int = 3) -> dict[str, int]:
    """Entities reachable from ``start`` within ``max_depth`` hops, with their depth."""
    if start not in isbrn.entities:
        return {}
    depth = {start: 0}
    frontier = [start]
    for d in range(1, max_depth + 1):
        nxt = []
        for node in frontier:
            for nb, _ in query_relations(isbrn, node):
                if nb not in depth:
                    depth[nb] = d
                    nxt.append(nb)
        frontier = nxt
    return depth
