"""Multi-domain fog/radio/optical topology with slotted spectrum.

Spectrum on every link is a row of ``F`` slots.  A lightpath uses one slot
interval, identical on all links it crosses (continuity) and gap-free on each
link (contiguity).  :func:`infer_occupancy` reconstructs what those two rules
force from a partial view of the slots.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, Inconsistent, InvalidInput

DEFAULT_SLOTS = 16
DOMAIN_KINDS = ("wireless", "optical", "computing")

# known-slot values in partial views
FREE = 0
OCCUPIED_UNKNOWN = -1

# inferred states
S_FREE = 0
S_OCCUPIED = 1
S_UNKNOWN = -1


class SpectrumMask:
    """Per-slot lightpath owner ids on one link (0 means free)."""

    __slots__ = ("owners",)

    def __init__(self, slots: int = DEFAULT_SLOTS, owners: Sequence[int] | None = None):
        if owners is not None:
            self.owners = np.array(owners, dtype=np.int64)
        else:
            self.owners = np.zeros(slots, dtype=np.int64)

    @property
    def slots(self) -> int:
        return self.owners.shape[0]

    @property
    def occupied(self) -> np.ndarray:
        return self.owners != 0

    @property
    def free(self) -> np.ndarray:
        return self.owners == 0

    def allocate(self, lo: int, hi: int, owner: int) -> None:
        if owner <= 0:
            raise InvalidInput("owner ids are positive")
        if not 0 <= lo <= hi < self.slots:
            raise InvalidInput(f"interval [{lo}, {hi}] outside 0..{self.slots - 1}")
        if np.any(self.owners[lo:hi + 1] != 0):
            raise InvalidInput(f"slots [{lo}, {hi}] not free")
        self.owners[lo:hi + 1] = owner

    def release(self, owner: int) -> None:
        self.owners[self.owners == owner] = 0

    def copy(self) -> "SpectrumMask":
        return SpectrumMask(owners=self.owners.copy())

    def bits(self) -> str:
        return "".join("1" if o else "0" for o in self.owners)

    def __eq__(self, other):
        return isinstance(other, SpectrumMask) and np.array_equal(self.owners, other.owners)


@dataclass
class Domain:
    id: str
    kind: str
    nodes: list[str]
    controller: str


@dataclass
class Link:
    id: int
    a: str
    b: str
    inter_domain: bool
    delay: float
    spectrum: SpectrumMask

    def other(self, node: str) -> str:
        return self.b if node == self.a else self.a


@dataclass
class Lightpath:
    id: int
    links: list[int]
    lo: int
    hi: int
    request_id: int = 0

    @property
    def width(self) -> int:
        return self.hi - self.lo + 1


@dataclass
class Topology:
    domains: dict[str, Domain]
    links: list[Link]
    slots: int = DEFAULT_SLOTS
    lightpaths: dict[int, Lightpath] = field(default_factory=dict)

    def __post_init__(self):
        self.node_domain: dict[str, str] = {}
        controllers = set()
        for d in self.domains.values():
            if d.kind not in DOMAIN_KINDS:
                raise ConfigError(f"domain {d.id}: unknown kind {d.kind!r}", "kind")
            if d.controller in controllers:
                raise ConfigError(f"controller {d.controller} manages two domains", "controller")
            controllers.add(d.controller)
            for n in d.nodes:
                if n in self.node_domain:
                    raise ConfigError(f"node {n} belongs to two domains", "nodes")
                self.node_domain[n] = d.id
        self.adj: dict[str, list[Link]] = {n: [] for n in self.node_domain}
        for link in self.links:
            for n in (link.a, link.b):
                if n not in self.node_domain:
                    raise ConfigError(f"link {link.id} references unknown node {n}", "links")
            if link.a == link.b:
                raise ConfigError(f"link {link.id} is a self loop", "links")
            if link.spectrum.slots != self.slots:
                raise ConfigError(f"link {link.id} spectrum width differs from {self.slots}", "slots")
            link.inter_domain = self.node_domain[link.a] != self.node_domain[link.b]
            self.adj[link.a].append(link)
            self.adj[link.b].append(link)
        self.controller_domain = {d.controller: d.id for d in self.domains.values()}

    def domain_of(self, node: str) -> str:
        return self.node_domain[node]

    def controller_of(self, domain: str) -> str:
        return self.domains[domain].controller

    def link(self, link_id: int) -> Link:
        return self.links[link_id]

    def masks(self) -> list[np.ndarray]:
        return [l.spectrum.owners.copy() for l in self.links]

    def domain_links(self, domain: str) -> list[Link]:
        """Links with at least one endpoint in ``domain``."""
        return [l for l in self.links if domain in (self.node_domain[l.a], self.node_domain[l.b])]

    def commit(self, lp: Lightpath) -> None:
        for lid in lp.links:
            seg = self.links[lid].spectrum.owners[lp.lo:lp.hi + 1]
            if np.any(seg != 0):
                raise InvalidInput(f"lightpath {lp.id}: slots busy on link {lid}")
        for lid in lp.links:
            self.links[lid].spectrum.allocate(lp.lo, lp.hi, lp.id)
        self.lightpaths[lp.id] = lp

    def release(self, lp_id: int) -> None:
        lp = self.lightpaths.pop(lp_id)
        for lid in lp.links:
            self.links[lid].spectrum.release(lp.id)

    def audit(self) -> None:
        """Check every committed lightpath against continuity and contiguity."""
        seen: dict[int, set] = {}
        for link in self.links:
            for owner in set(int(o) for o in link.spectrum.owners if o):
                idx = np.flatnonzero(link.spectrum.owners == owner)
                if idx[-1] - idx[0] + 1 != idx.size:
                    raise AssertionError(f"lightpath {owner} not contiguous on link {link.id}")
                lp = self.lightpaths.get(owner)
                if lp is None:
                    raise AssertionError(f"orphan slots of {owner} on link {link.id}")
                if (idx[0], idx[-1]) != (lp.lo, lp.hi):
                    raise AssertionError(f"lightpath {owner} breaks continuity on link {link.id}")
                seen.setdefault(owner, set()).add(link.id)
        for lp in self.lightpaths.values():
            if seen.get(lp.id, set()) != set(lp.links):
                raise AssertionError(f"lightpath {lp.id} missing from some of its links")

    def to_dict(self) -> dict:
        return {
            "slots": self.slots,
            "domains": [{"id": d.id, "kind": d.kind, "controller": d.controller, "nodes": list(d.nodes)}
                        for d in self.domains.values()],
            "links": [{"a": l.a, "b": l.b, "delay": l.delay} for l in self.links],
        }


def topology_from_dict(d: Mapping) -> Topology:
    for key in ("domains", "links"):
        if key not in d:
            raise ConfigError(f"topology is missing {key!r}", key)
    slots = int(d.get("slots", DEFAULT_SLOTS))
    if slots < 1:
        raise ConfigError("slots must be positive", "slots")
    domains = {}
    for dd in d["domains"]:
        for key in ("id", "kind", "nodes"):
            if key not in dd:
                raise ConfigError(f"domain entry is missing {key!r}", key)
        domains[dd["id"]] = Domain(dd["id"], dd["kind"], list(dd["nodes"]), dd.get("controller", f"SC-{dd['id']}"))
    links = []
    for k, ld in enumerate(d["links"]):
        for key in ("a", "b"):
            if key not in ld:
                raise ConfigError(f"link {k} is missing {key!r}", key)
        links.append(Link(k, ld["a"], ld["b"], False, float(ld.get("delay", 1.0)), SpectrumMask(slots)))
    return Topology(domains, links, slots)


def load_topology(path) -> Topology:
    with open(path) as fh:
        return topology_from_dict(json.load(fh))


def default_topology_dict() -> dict:
    return json.loads(resources.files("blcs.data").joinpath("default_topology.json").read_text())


def default_topology() -> Topology:
    return topology_from_dict(default_topology_dict())


# --------------------------------------------------------------------------
# spectrum inference
# --------------------------------------------------------------------------


@dataclass
class InferredOccupancy:
    """Per-link slot states: S_FREE, S_OCCUPIED or S_UNKNOWN, plus owners where forced."""

    slots: int
    states: dict[int, np.ndarray]
    owners: dict[int, np.ndarray]

    def state(self, link: int) -> np.ndarray:
        s = self.states.get(link)
        if s is None:
            return np.full(self.slots, S_UNKNOWN, dtype=np.int8)
        return s

    def occupied_slots(self, link: int) -> set[int]:
        return set(int(k) for k in np.flatnonzero(self.state(link) == S_OCCUPIED))


def _solve_singletons(empties: list[int], allowed: dict[int, set[int]], conflicts: dict[int, set[int]]) -> bool:
    """Can every empty lightpath take one allowed slot, distinct from link-sharing peers?"""
    order = sorted(empties, key=lambda e: (len(allowed[e]), e))
    chosen: dict[int, int] = {}

    def go(k: int) -> bool:
        if k == len(order):
            return True
        e = order[k]
        for s in sorted(allowed[e]):
            if all(chosen.get(o) != s for o in conflicts[e]):
                chosen[e] = s
                if go(k + 1):
                    return True
                del chosen[e]
        return False

    return go(0)


def infer_occupancy(partial: Mapping[int, Mapping[int, int]], skeletons: Mapping[int, Sequence[int]],
                    slots: int = DEFAULT_SLOTS, links: Iterable[int] = ()) -> InferredOccupancy:
    """Slot states forced by a partial view under continuity and contiguity.

    ``partial`` maps link -> {slot: value} with value FREE (0), a positive
    lightpath id, or OCCUPIED_UNKNOWN.  ``skeletons`` maps lightpath id ->
    the links it crosses.  Slots outside the skeletons may carry unrelated
    traffic, so only known-free slots are ever inferred free.  A slot is
    inferred occupied exactly when every consistent completion occupies it.

    Raises :class:`Inconsistent` when no completion exists.
    """
    lp_links = {int(p): set(int(l) for l in ls) for p, ls in skeletons.items()}
    known: dict[int, dict[int, int]] = {}
    for link, slot_map in partial.items():
        row = {}
        for s, v in slot_map.items():
            s, v = int(s), int(v)
            if not 0 <= s < slots:
                raise InvalidInput(f"slot {s} outside 0..{slots - 1}")
            if v > 0:
                if v not in lp_links:
                    raise Inconsistent(f"slot {s} on link {link} claims unknown lightpath {v}")
                if int(link) not in lp_links[v]:
                    raise Inconsistent(f"lightpath {v} does not cross link {link}")
            row[s] = v
        known[int(link)] = row

    universe = set(known) | set(int(l) for l in links)
    for ls in lp_links.values():
        universe |= ls
    by_link: dict[int, list[int]] = {l: [] for l in universe}
    for p, ls in lp_links.items():
        for l in ls:
            by_link[l].append(p)

    owned: dict[int, list[int]] = {}
    for link, row in known.items():
        for s, v in row.items():
            if v > 0:
                owned.setdefault(v, []).append(s)
    hull = {p: (min(ss), max(ss)) for p, ss in owned.items()}

    for p, (lo, hi) in hull.items():
        for l in lp_links[p]:
            row = known.get(l, {})
            for s in range(lo, hi + 1):
                v = row.get(s)
                if v == FREE:
                    raise Inconsistent(f"lightpath {p} needs slot {s} on link {l}, reported free")
                if v is not None and v > 0 and v != p:
                    raise Inconsistent(f"slot {s} on link {l} claimed by {v} and {p}")
    for l, ps in by_link.items():
        hs = sorted((hull[p], p) for p in ps if p in hull)
        for (a, p), (b, q) in zip(hs, hs[1:]):
            if b[0] <= a[1]:
                raise Inconsistent(f"lightpaths {p} and {q} overlap on link {l}")

    empties = sorted(p for p in lp_links if p not in hull)
    allowed: dict[int, set[int]] = {}
    conflicts: dict[int, set[int]] = {}
    for e in empties:
        ok = set(range(slots))
        for l in lp_links[e]:
            row = known.get(l, {})
            for s, v in row.items():
                if v == FREE or v > 0:
                    ok.discard(s)
            for p in by_link[l]:
                if p in hull:
                    ok -= set(range(hull[p][0], hull[p][1] + 1))
        allowed[e] = ok
        conflicts[e] = {q for l in lp_links[e] for q in by_link[l] if q != e and q not in hull}
    if not _solve_singletons(empties, allowed, conflicts):
        raise Inconsistent("lightpaths without known slots cannot all be placed")

    states: dict[int, np.ndarray] = {}
    owners: dict[int, np.ndarray] = {}
    for l in sorted(universe):
        st = np.full(slots, S_UNKNOWN, dtype=np.int8)
        ow = np.zeros(slots, dtype=np.int64)
        row = known.get(l, {})
        for s, v in row.items():
            if v == FREE:
                st[s] = S_FREE
            elif v == OCCUPIED_UNKNOWN:
                st[s] = S_OCCUPIED
        for p in by_link[l]:
            if p in hull:
                lo, hi = hull[p]
                st[lo:hi + 1] = S_OCCUPIED
                ow[lo:hi + 1] = p
        through = [e for e in by_link[l] if e not in hull]
        for s in range(slots):
            # known-occupied slots outside a hull may still have a forced owner
            if st[s] == S_FREE or ow[s] != 0:
                continue
            cover = [e for e in through if s in allowed[e]]
            if not cover:
                continue
            reduced = {e: (allowed[e] - {s} if e in cover else allowed[e]) for e in empties}
            if not _solve_singletons(empties, reduced, conflicts):
                st[s] = S_OCCUPIED
                able = [e for e in cover if _solve_singletons(empties, {**allowed, e: {s}}, conflicts)]
                if len(able) == 1:
                    ow[s] = able[0]
        states[l] = st
        owners[l] = ow
    return InferredOccupancy(slots, states, owners)


def check_candidate(inferred: InferredOccupancy, links: Sequence[int], lo: int, hi: int) -> str:
    """'conflicting' if any candidate slot is inferred occupied on any candidate link."""
    if not 0 <= lo <= hi < inferred.slots:
        raise InvalidInput(f"candidate [{lo}, {hi}] outside 0..{inferred.slots - 1}")
    for l in links:
        if np.any(inferred.state(l)[lo:hi + 1] == S_OCCUPIED):
            return "conflicting"
    return "consistent"


def first_fit_alloc(masks: Sequence, width: int) -> tuple[int, int] | None:
    """Lowest ``[lo, hi]`` of ``width`` slots free on every mask, or None when blocked.

    Masks may be :class:`SpectrumMask` objects or boolean free-slot arrays.
    """
    if width < 1:
        raise InvalidInput("width must be >= 1")
    if not masks:
        raise InvalidInput("empty path")
    free = None
    for m in masks:
        f = m.free if isinstance(m, SpectrumMask) else np.asarray(m, dtype=bool)
        free = f.copy() if free is None else (free & f)
    n = free.shape[0]
    if width > n:
        return None
    run = 0
    for s in range(n):
        run = run + 1 if free[s] else 0
        if run >= width:
            return (s - width + 1, s)
    return None
