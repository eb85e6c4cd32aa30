"""Cross-domain route computation over trusted domains."""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from itertools import count

import numpy as np

from .errors import InvalidInput
from .fron_topology import Lightpath, Link, Topology, first_fit_alloc

NO_PATH = "NoPath"
NO_SPECTRUM = "NoSpectrum"
STALE_PLAN = "StalePlan"
UNROUTABLE = "Unroutable"
SABOTAGED = "Sabotaged"
REASONS = (NO_PATH, NO_SPECTRUM, STALE_PLAN, UNROUTABLE, SABOTAGED)

SETUP_COST = 5.0
AUTH_COST = 20.0


@dataclass(frozen=True)
class Blocked:
    reason: str
    detail: str = ""

    def __bool__(self):
        return False


@dataclass(frozen=True)
class RouteRequest:
    id: int
    source: str
    destination: str
    width: int
    arrival: float
    holding: float

    def __post_init__(self):
        if self.width < 1:
            raise InvalidInput("request width must be >= 1")
        if self.holding < 1:
            raise InvalidInput("holding time must be >= 1")


@dataclass
class RoutePlan:
    domains: list[str]
    links: list[int]
    lo: int
    hi: int
    nodes: list[str] = field(default_factory=list)
    authenticated: frozenset = frozenset()

    def to_dict(self) -> dict:
        return {"domains": self.domains, "links": self.links, "slots": [self.lo, self.hi],
                "authenticated": sorted(self.authenticated)}


@dataclass
class DomainGraph:
    """Domains left after removing distrusted ones, plus the inter-domain links among them."""

    topology: Topology
    domains: frozenset
    links: list[Link]

    def __post_init__(self):
        self.adj: dict[str, list[tuple[Link, str]]] = {d: [] for d in self.domains}
        nd = self.topology.node_domain
        for l in self.links:
            da, db = nd[l.a], nd[l.b]
            self.adj[da].append((l, db))
            self.adj[db].append((l, da))

    def hops_to(self, target: str) -> dict[str, int]:
        dist = {target: 0}
        q = deque([target])
        while q:
            d = q.popleft()
            for _, nb in self.adj.get(d, ()):
                if nb not in dist:
                    dist[nb] = dist[d] + 1
                    q.append(nb)
        return dist


def trusted_domain_graph(topology: Topology, requester_domain: str, distrusted=(), src_domain: str | None = None,
                         dst_domain: str | None = None):
    """Drop the domains in ``distrusted`` (never the requester's own).

    Returns a :class:`DomainGraph`, or ``Blocked(Unroutable)`` when the source
    or destination domain is among the dropped ones.
    """
    drop = set(distrusted) - {requester_domain}
    for d in (src_domain, dst_domain):
        if d is not None and d in drop:
            return Blocked(UNROUTABLE, f"domain {d} is not trusted")
    keep = frozenset(d for d in topology.domains if d not in drop)
    nd = topology.node_domain
    links = [l for l in topology.links if l.inter_domain and nd[l.a] in keep and nd[l.b] in keep]
    return DomainGraph(topology, keep, links)


def intra_paths(topology: Topology, domain: str, u: str, v: str) -> list[tuple[int, ...]]:
    """All simple intra-domain link paths u -> v, shortest delay first (ties: hops, link ids)."""
    cache = topology.__dict__.setdefault("_intra_cache", {})
    key = (domain, u, v)
    hit = cache.get(key)
    if hit is not None:
        return hit
    nd = topology.node_domain
    found = []

    def walk(node, seen, links, delay):
        if node == v:
            found.append((delay, len(links), tuple(links)))
            return
        for l in topology.adj[node]:
            nxt = l.other(node)
            if nd[nxt] != domain or nxt in seen:
                continue
            seen.add(nxt)
            links.append(l.id)
            walk(nxt, seen, links, delay + l.delay)
            links.pop()
            seen.discard(nxt)

    walk(u, {u}, [], 0.0)
    found.sort()
    paths = [p for _, _, p in found]
    cache[key] = paths
    return paths


def _has_run(bits: int, width: int) -> bool:
    """Does the free-slot bitmask hold ``width`` consecutive set bits?"""
    x = bits
    for k in range(1, width):
        x &= bits >> k
        if not x:
            return False
    return x != 0


def _free_bits(link: Link) -> int:
    free = np.packbits(link.spectrum.owners == 0, bitorder="little")
    return int.from_bytes(free.tobytes(), "little")


def greedy_route(graph: DomainGraph, req: RouteRequest, budget: int = 400):
    """Hierarchical greedy route with first-fit spectrum.

    At each domain boundary the inter-domain links are tried in order of
    (domains left to destination, link utilization, link id); inside a
    domain the lowest-delay simple path is preferred.  A choice that leaves
    no common free run of ``req.width`` slots is skipped, and a dead end
    falls back to the next choice (at most ``budget`` expansions).
    """
    topo = graph.topology
    nd = topo.node_domain
    src_dom, dst_dom = nd[req.source], nd[req.destination]
    if src_dom not in graph.domains or dst_dom not in graph.domains:
        return Blocked(UNROUTABLE, "endpoint domain excluded")
    hops = graph.hops_to(dst_dom)
    if src_dom not in hops:
        return Blocked(NO_PATH, f"no trusted domain path {src_dom} -> {dst_dom}")
    width = req.width
    full = (1 << topo.slots) - 1
    bits_cache: dict[int, int] = {}
    util: dict[int, float] = {}
    expansions = [0]

    def link_bits(lid: int) -> int:
        b = bits_cache.get(lid)
        if b is None:
            b = bits_cache[lid] = _free_bits(topo.links[lid])
        return b

    def free_of(link_ids, free):
        for lid in link_ids:
            free &= link_bits(lid)
        return free

    def utilization(link: Link) -> float:
        u = util.get(link.id)
        if u is None:
            u = util[link.id] = 1.0 - bin(link_bits(link.id)).count("1") / topo.slots
        return u

    def dfs(node, dom, visited, links, doms, nodes, free):
        expansions[0] += 1
        if expansions[0] > budget:
            return None
        if dom == dst_dom:
            for path in intra_paths(topo, dom, node, req.destination):
                f = free_of(path, free)
                if _has_run(f, width):
                    return links + list(path), doms, nodes + [req.destination]
            return None
        cands = []
        for link, nb in graph.adj[dom]:
            if nb in visited or nb not in hops:
                continue
            cands.append(((hops[nb], utilization(link), link.id), link, nb))
        cands.sort(key=lambda c: c[0])
        for _, link, nb in cands:
            near = link.a if nd[link.a] == dom else link.b
            far = link.other(near)
            for path in intra_paths(topo, dom, node, near):
                f = free_of(path + (link.id,), free)
                if not _has_run(f, width):
                    continue
                res = dfs(far, nb, visited | {nb}, links + list(path) + [link.id], doms + [nb],
                          nodes + [near, far], f)
                if res is not None:
                    return res
        return None

    res = dfs(req.source, src_dom, frozenset([src_dom]), [], [src_dom], [req.source], full)
    if res is None:
        return Blocked(NO_SPECTRUM, f"no common free run of {width} slots")
    links, doms, nodes = res
    if not links:
        # source == destination: nothing to allocate; treat as a zero-length plan
        return RoutePlan(doms, [], 0, width - 1, nodes)
    interval = first_fit_alloc([topo.links[l].spectrum for l in links], width)
    if interval is None:
        return Blocked(NO_SPECTRUM, "first fit failed")
    return RoutePlan(doms, links, interval[0], interval[1], nodes)


def provision(plan: RoutePlan, topology: Topology, req: RouteRequest, lightpath_id: int, auth_rounds: int = 0,
              setup_cost: float = SETUP_COST, auth_cost: float = AUTH_COST):
    """Commit the plan's slots on every link at once.

    Returns ``(Lightpath, latency)``; a plan whose slots were taken since it
    was computed yields ``Blocked(StalePlan)`` and leaves every mask as it was.
    """
    for lid in plan.links:
        if np.any(topology.links[lid].spectrum.owners[plan.lo:plan.hi + 1] != 0):
            return Blocked(STALE_PLAN, f"link {lid} slots [{plan.lo}, {plan.hi}] taken")
    lp = Lightpath(lightpath_id, list(plan.links), plan.lo, plan.hi, req.id)
    if plan.links:
        topology.commit(lp)
    latency = setup_cost * len(plan.domains) + auth_cost * auth_rounds
    return lp, latency


def shortest_delay_path(topology: Topology, src: str, dst: str, allowed_domains=None) -> list[int] | None:
    """Plain Dijkstra over links (used for diagnostics and examples)."""
    nd = topology.node_domain
    tie = count()
    dist = {src: 0.0}
    prev: dict[str, tuple[str, int]] = {}
    pq = [(0.0, next(tie), src)]
    while pq:
        d, _, u = heapq.heappop(pq)
        if u == dst:
            break
        if d > dist.get(u, float("inf")):
            continue
        for l in topology.adj[u]:
            v = l.other(u)
            if allowed_domains is not None and nd[v] not in allowed_domains:
                continue
            nd_ = d + l.delay
            if nd_ < dist.get(v, float("inf")):
                dist[v] = nd_
                prev[v] = (u, l.id)
                heapq.heappush(pq, (nd_, next(tie), v))
    if dst not in dist:
        return None
    out = []
    node = dst
    while node != src:
        node, lid = prev[node]
        out.append(lid)
    return out[::-1]
