"""Two-layer relation memory: labeled groups of stored relation vectors.

Similarity is cosine throughout.  Unlabeled inputs that match no stored node
well enough open a new group; everything else is placed with the k-NN rule.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput, NoRelations

DEFAULT_K = 3
DEFAULT_THETA_MATCH = 0.8
DEFAULT_MAX_ITERS = 5


def _unit(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    return v / n if n > 0.0 else np.zeros_like(v)


@dataclass
class RecallResult:
    group: str
    vectors: list          # retrieved node vectors in visit order
    nodes: list            # global node indices in visit order
    iterations: int
    confidence: float      # cosine between the query and the final matched node
    final: np.ndarray = field(repr=False, default=None)


class RelationMemory:
    def __init__(self, dimension: int, k: int = DEFAULT_K, theta_match: float = DEFAULT_THETA_MATCH):
        if dimension < 1 or k < 1:
            raise InvalidInput("dimension and k must be positive")
        self.dimension = dimension
        self.k = k
        self.theta_match = theta_match
        self.groups: dict[str, list[int]] = {}
        self._vectors: list[np.ndarray] = []
        self._labels: list[str] = []
        self._unit_mat: np.ndarray | None = None
        self._auto = 0

    def __len__(self) -> int:
        return len(self._vectors)

    @property
    def group_count(self) -> int:
        return len(self.groups)

    def group_of(self, node: int) -> str:
        return self._labels[node]

    def vectors(self, label: str) -> list[np.ndarray]:
        return [self._vectors[i] for i in self.groups[label]]

    def _check(self, vector) -> np.ndarray:
        v = np.asarray(vector, dtype=np.float64).reshape(-1)
        if v.shape[0] != self.dimension:
            raise InvalidInput(f"vector width {v.shape[0]} != memory dimension {self.dimension}")
        return v

    def _matrix(self) -> np.ndarray:
        if self._unit_mat is None:
            self._unit_mat = np.array([_unit(v) for v in self._vectors]).reshape(-1, self.dimension)
        return self._unit_mat

    def similarities(self, vector) -> np.ndarray:
        return self._matrix() @ _unit(self._check(vector))

    def _new_label(self) -> str:
        while f"group-{self._auto}" in self.groups:
            self._auto += 1
        label = f"group-{self._auto}"
        self._auto += 1
        return label

    def store(self, vector, label: str | None = None) -> str:
        """Add ``vector``; returns the group it joined."""
        v = self._check(vector).copy()
        if label is None:
            if not self._vectors or float(np.max(self.similarities(v))) < self.theta_match:
                label = self._new_label()
            else:
                label = self.knn_assign(v)
        self.groups.setdefault(label, []).append(len(self._vectors))
        self._vectors.append(v)
        self._labels.append(label)
        self._unit_mat = None
        return label

    def _ranked(self, vector) -> np.ndarray:
        sims = self.similarities(vector)
        # stable sort: equal similarities keep insertion order
        return np.argsort(-sims, kind="stable"), sims

    def knn_assign(self, vector, k: int | None = None) -> str:
        if not self._vectors:
            raise NoRelations("relation memory is empty")
        k = self.k if k is None else k
        if k < 1:
            raise InvalidInput("k must be >= 1")
        order, _ = self._ranked(vector)
        top = order[:min(k, len(order))]
        counts: dict[str, int] = {}
        first_pos: dict[str, int] = {}
        for pos, node in enumerate(top):
            lab = self._labels[node]
            counts[lab] = counts.get(lab, 0) + 1
            first_pos.setdefault(lab, pos)
        best = max(counts.values())
        tied = [lab for lab, c in counts.items() if c == best]
        return min(tied, key=lambda lab: first_pos[lab])

    def recall(self, query, max_iters: int = DEFAULT_MAX_ITERS) -> RecallResult:
        """Iteratively read the closest node and fold it into the query context.

        Stops when the best node repeats or after ``max_iters`` rounds.  The
        matched group is that of the final node when the match clears
        ``theta_match``; otherwise the k-NN rule decides on the combined
        context.
        """
        if max_iters < 1:
            raise InvalidInput("max_iters must be >= 1")
        if not self._vectors:
            raise NoRelations("relation memory is empty")
        q0 = self._check(query)
        context = [q0]
        ctx = q0
        visited: list[int] = []
        iterations = 0
        while iterations < max_iters:
            iterations += 1
            sims = self.similarities(ctx)
            best = int(np.argmax(sims))
            if visited and best == visited[-1]:
                break
            visited.append(best)
            context.append(self._vectors[best])
            ctx = np.mean(context, axis=0)
            if best in visited[:-1]:
                break
        last = visited[-1]
        final = 0.5 * (self._vectors[last] + ctx)
        confidence = float(_unit(q0) @ _unit(self._vectors[last]))
        if float(_unit(final) @ _unit(self._vectors[last])) >= self.theta_match:
            group = self._labels[last]
        else:
            group = self.knn_assign(final)
        return RecallResult(group, [self._vectors[i] for i in visited], visited, iterations, confidence, final)

    def dump(self) -> dict:
        return {
            "dimension": self.dimension,
            "k": self.k,
            "theta_match": self.theta_match,
            "nodes": [{"group": lab, "vector": [float(x) for x in v]} for lab, v in zip(self._labels, self._vectors)],
        }

    def dumps(self) -> str:
        return json.dumps(self.dump(), sort_keys=True)

    @classmethod
    def load(cls, d: dict) -> "RelationMemory":
        mem = cls(d["dimension"], d.get("k", DEFAULT_K), d.get("theta_match", DEFAULT_THETA_MATCH))
        for node in d["nodes"]:
            mem.store(node["vector"], node["group"])
        return mem


def store(mem: RelationMemory, vector, label: str | None = None) -> RelationMemory:
    mem.store(vector, label)
    return mem


def knn_assign(mem: RelationMemory, vector, k: int | None = None) -> str:
    return mem.knn_assign(vector, k)


def recall(mem: RelationMemory, partial, max_iters: int = DEFAULT_MAX_ITERS) -> RecallResult:
    return mem.recall(partial, max_iters)
