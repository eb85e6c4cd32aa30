"""Relation network over identification/status/behavior triples.

Each entity token is tagged with its base (``<I>``, ``<S>``, ``<B>``) and the
two-token sequence is run through a shared 32-unit LSTM.  A triple's three
encodings are concatenated in (identification, behavior, status) order and fed
to the relation MLP ``g``; relations are summed over the triple set and the
aggregation MLP ``f`` maps the sum to a trust score in [0, 1].

Everything is plain numpy with hand-written backpropagation.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import DegenerateDataset, InvalidInput

HIDDEN = 32
UNK = "<unk>"
ROLE_TAGS = {"identification": "<I>", "status": "<S>", "behavior": "<B>"}
RESERVED = (UNK, "<I>", "<S>", "<B>")
GATES = ("input", "forget", "output", "candidate")
MODEL_FORMAT = "blcs-relation-net"
MODEL_VERSION = 1

_ACTS = ("relu", "linear", "sigmoid", "tanh")


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "linear":
        return z
    if name == "sigmoid":
        return _sigmoid(z)
    if name == "tanh":
        return np.tanh(z)
    raise InvalidInput(f"unknown activation {name!r}")


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    if name == "linear":
        return np.ones_like(z)
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "tanh":
        return 1.0 - a * a
    raise InvalidInput(f"unknown activation {name!r}")


# --------------------------------------------------------------------------
# parameter bundles
# --------------------------------------------------------------------------


@dataclass
class EncoderParams:
    """Token embeddings plus LSTM gate weights.

    ``W`` has shape (4, input_dim, 32), ``U`` (4, 32, 32) and ``b`` (4, 32),
    gates ordered input, forget, output, candidate.
    """

    vocab: list[str]
    embed: np.ndarray
    W: np.ndarray
    U: np.ndarray
    b: np.ndarray
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.embed = np.asarray(self.embed, dtype=np.float64)
        self.W = np.asarray(self.W, dtype=np.float64)
        self.U = np.asarray(self.U, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if len(set(self.vocab)) != len(self.vocab):
            raise InvalidInput("duplicate tokens in vocabulary")
        if self.embed.ndim != 2 or self.embed.shape[0] != len(self.vocab):
            raise InvalidInput(f"embedding table shape {self.embed.shape} does not match vocab of {len(self.vocab)}")
        d = self.embed.shape[1]
        if self.W.shape != (4, d, HIDDEN):
            raise InvalidInput(f"input weights must be (4, {d}, {HIDDEN}), got {self.W.shape}")
        if self.U.shape != (4, HIDDEN, HIDDEN):
            raise InvalidInput(f"recurrent weights must be (4, {HIDDEN}, {HIDDEN}), got {self.U.shape}")
        if self.b.shape != (4, HIDDEN):
            raise InvalidInput(f"biases must be (4, {HIDDEN}), got {self.b.shape}")
        self._index = {tok: i for i, tok in enumerate(self.vocab)}

    @property
    def input_dim(self) -> int:
        return self.embed.shape[1]

    @property
    def hidden(self) -> int:
        return HIDDEN

    def token_id(self, token: str) -> int:
        idx = self._index.get(token)
        if idx is None:
            idx = self._index.get(UNK)
            if idx is None:
                raise InvalidInput(f"token {token!r} not in vocabulary and no {UNK} entry")
        return idx

    def copy(self) -> "EncoderParams":
        return EncoderParams(list(self.vocab), self.embed.copy(), self.W.copy(), self.U.copy(), self.b.copy())

    @classmethod
    def zeros(cls, vocab: Sequence[str], input_dim: int = 16) -> "EncoderParams":
        v = list(vocab)
        return cls(v, np.zeros((len(v), input_dim)), np.zeros((4, input_dim, HIDDEN)),
                   np.zeros((4, HIDDEN, HIDDEN)), np.zeros((4, HIDDEN)))


@dataclass
class RnParams:
    """Weights of the relation MLP ``g`` and aggregation MLP ``f``.

    Layers are ``(W, b)`` pairs with ``W`` shaped (fan_in, fan_out).  One
    activation name per layer.
    """

    g: list[tuple[np.ndarray, np.ndarray]]
    f: list[tuple[np.ndarray, np.ndarray]]
    g_acts: list[str] = field(default_factory=lambda: ["relu", "linear"])
    f_acts: list[str] = field(default_factory=lambda: ["relu", "sigmoid"])

    def __post_init__(self):
        self.g = [(np.asarray(W, dtype=np.float64), np.asarray(b, dtype=np.float64)) for W, b in self.g]
        self.f = [(np.asarray(W, dtype=np.float64), np.asarray(b, dtype=np.float64)) for W, b in self.f]
        for name, layers, acts in (("g", self.g, self.g_acts), ("f", self.f, self.f_acts)):
            if not layers:
                raise InvalidInput(f"{name} needs at least one layer")
            if len(acts) != len(layers):
                raise InvalidInput(f"{name}: {len(acts)} activations for {len(layers)} layers")
            for a in acts:
                if a not in _ACTS:
                    raise InvalidInput(f"unknown activation {a!r}")
            for k, (W, b) in enumerate(layers):
                if W.ndim != 2 or b.shape != (W.shape[1],):
                    raise InvalidInput(f"{name} layer {k}: bad shapes {W.shape} / {b.shape}")
                if k and W.shape[0] != layers[k - 1][0].shape[1]:
                    raise InvalidInput(f"{name} layer {k}: fan-in {W.shape[0]} != previous fan-out")
        if self.g[0][0].shape[0] != 3 * HIDDEN:
            raise InvalidInput(f"g input width must be {3 * HIDDEN}, got {self.g[0][0].shape[0]}")
        if self.f[0][0].shape[0] != self.g[-1][0].shape[1]:
            raise InvalidInput("f input width must equal g output width")
        if self.f[-1][0].shape[1] != 1:
            raise InvalidInput("f must end in a single output unit")
        if self.f_acts[-1] != "sigmoid":
            raise InvalidInput("f output activation must be sigmoid so scores land in [0, 1]")

    @property
    def relation_dim(self) -> int:
        return self.g[-1][0].shape[1]

    def copy(self) -> "RnParams":
        return RnParams([(W.copy(), b.copy()) for W, b in self.g], [(W.copy(), b.copy()) for W, b in self.f],
                        list(self.g_acts), list(self.f_acts))

    @classmethod
    def zeros(cls, g_sizes=(96, 64, 64), f_sizes=(64, 32, 1)) -> "RnParams":
        g = [(np.zeros((a, b)), np.zeros(b)) for a, b in zip(g_sizes[:-1], g_sizes[1:])]
        f = [(np.zeros((a, b)), np.zeros(b)) for a, b in zip(f_sizes[:-1], f_sizes[1:])]
        return cls(g, f, _default_acts(len(g), "linear"), _default_acts(len(f), "sigmoid"))


def _default_acts(n: int, last: str) -> list[str]:
    return ["relu"] * (n - 1) + [last]


@dataclass(frozen=True)
class TrainSample:
    """A set of (identification, status, behavior) triples with a trust label."""

    triples: tuple
    label: int

    def __post_init__(self):
        if not self.triples:
            raise InvalidInput("TrainSample needs at least one triple")
        if self.label not in (0, 1):
            raise InvalidInput("label must be 1 (trusted) or 0 (malicious)")


def triple_tokens(t) -> tuple[str, str, str]:
    """(identification, status, behavior) from a KnowledgeTriple or plain 3-tuple."""
    if hasattr(t, "identification"):
        return (t.identification, t.status, t.behavior)
    i, s, b = t
    return (i, s, b)


def init_params(vocab: Iterable[str], seed: int = 0, input_dim: int = 16,
                g_sizes=(96, 64, 64), f_sizes=(64, 32, 1),
                g_acts: list[str] | None = None, f_acts: list[str] | None = None) -> tuple[RnParams, EncoderParams]:
    rng = np.random.default_rng(seed)
    toks = list(RESERVED) + sorted(set(vocab) - set(RESERVED))
    embed = rng.uniform(-0.1, 0.1, size=(len(toks), input_dim))
    lim = 1.0 / np.sqrt(HIDDEN)
    W = rng.uniform(-lim, lim, size=(4, input_dim, HIDDEN))
    U = rng.uniform(-lim, lim, size=(4, HIDDEN, HIDDEN))
    b = np.zeros((4, HIDDEN))
    b[1] = 1.0  # forget-gate bias
    enc = EncoderParams(toks, embed, W, U, b)

    def mlp(sizes):
        return [(rng.normal(0.0, np.sqrt(2.0 / a), size=(a, c)), np.zeros(c)) for a, c in zip(sizes[:-1], sizes[1:])]

    g = mlp(g_sizes)
    f = mlp(f_sizes)
    rn = RnParams(g, f, g_acts or _default_acts(len(g), "linear"), f_acts or _default_acts(len(f), "sigmoid"))
    return rn, enc


# --------------------------------------------------------------------------
# forward passes
# --------------------------------------------------------------------------


def _lstm_forward(ids: np.ndarray, p: EncoderParams, keep: bool = False):
    """Run the LSTM over a (N, T) id matrix; returns final hidden (N, 32)."""
    n, steps = ids.shape
    Wf = p.W.transpose(1, 0, 2).reshape(p.input_dim, 4 * HIDDEN)
    Uf = p.U.transpose(1, 0, 2).reshape(HIDDEN, 4 * HIDDEN)
    bf = p.b.reshape(4 * HIDDEN)
    h = np.zeros((n, HIDDEN))
    c = np.zeros((n, HIDDEN))
    cache = []
    for t in range(steps):
        x = p.embed[ids[:, t]]
        z = x @ Wf + h @ Uf + bf
        gi = _sigmoid(z[:, :HIDDEN])
        gf = _sigmoid(z[:, HIDDEN:2 * HIDDEN])
        go = _sigmoid(z[:, 2 * HIDDEN:3 * HIDDEN])
        gc = np.tanh(z[:, 3 * HIDDEN:])
        c_new = gf * c + gi * gc
        tc = np.tanh(c_new)
        h_new = go * tc
        if keep:
            cache.append((x, h, c, gi, gf, go, gc, tc))
        h, c = h_new, c_new
    return h, cache


def _lstm_backward(ids: np.ndarray, p: EncoderParams, cache, dh: np.ndarray):
    dW = np.zeros_like(p.W)
    dU = np.zeros_like(p.U)
    db = np.zeros_like(p.b)
    dE = np.zeros_like(p.embed)
    Wf = p.W.transpose(1, 0, 2).reshape(p.input_dim, 4 * HIDDEN)
    Uf = p.U.transpose(1, 0, 2).reshape(HIDDEN, 4 * HIDDEN)
    dc = np.zeros_like(dh)
    for t in range(len(cache) - 1, -1, -1):
        x, h_prev, c_prev, gi, gf, go, gc, tc = cache[t]
        do = dh * tc
        dc = dc + dh * go * (1.0 - tc * tc)
        dz = np.concatenate([
            dc * gc * gi * (1.0 - gi),
            dc * c_prev * gf * (1.0 - gf),
            do * go * (1.0 - go),
            dc * gi * (1.0 - gc * gc),
        ], axis=1)
        dWf = x.T @ dz
        dUf = h_prev.T @ dz
        dW += dWf.reshape(p.input_dim, 4, HIDDEN).transpose(1, 0, 2)
        dU += dUf.reshape(HIDDEN, 4, HIDDEN).transpose(1, 0, 2)
        db += dz.sum(axis=0).reshape(4, HIDDEN)
        np.add.at(dE, ids[:, t], dz @ Wf.T)
        dh = dz @ Uf.T
        dc = dc * gf
    return dE, dW, dU, db


def _mlp_forward(x: np.ndarray, layers, acts, keep: bool = False):
    cache = []
    for (W, b), a in zip(layers, acts):
        z = x @ W + b
        y = _act(a, z)
        if keep:
            cache.append((x, z, y))
        x = y
    return x, cache


def _mlp_backward(layers, acts, cache, dy: np.ndarray, skip_last_act: bool = False):
    grads = []
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        x, z, y = cache[k]
        if skip_last_act and k == len(layers) - 1:
            dz = dy
        else:
            dz = dy * _act_grad(acts[k], z, y)
        grads.append((x.T @ dz, dz.sum(axis=0)))
        dy = dz @ W.T
    grads.reverse()
    return dy, grads


def lstm_encode(seq: Sequence[str], p: EncoderParams) -> np.ndarray:
    """Final hidden state (32 values) of the LSTM run over ``seq``."""
    if len(seq) == 0:
        raise InvalidInput("cannot encode an empty token sequence")
    ids = np.array([[p.token_id(t) for t in seq]], dtype=np.int64)
    h, _ = _lstm_forward(ids, p)
    return h[0]


def encode_entity(role: str, token: str, p: EncoderParams) -> np.ndarray:
    return lstm_encode([ROLE_TAGS[role], token], p)


def relation_vectors(triples: Sequence, p: RnParams) -> np.ndarray:
    """g applied to each encoded (i, b, s) triple; one row per triple."""
    x = np.stack([np.concatenate([np.asarray(i), np.asarray(b), np.asarray(s)]) for i, b, s in triples])
    g, _ = _mlp_forward(x, p.g, p.g_acts)
    return g


def _canonical_sum(rows: np.ndarray) -> np.ndarray:
    # lexicographic row order makes the float sum independent of input order
    order = np.lexsort(rows.T[::-1])
    total = np.zeros(rows.shape[1])
    for k in order:
        total = total + rows[k]
    return total


def rn_score(triples: Sequence, p: RnParams) -> float:
    """Trust score of a set of encoded ``(i, b, s)`` triples."""
    if len(triples) == 0:
        raise InvalidInput("rn_score needs at least one triple")
    g = relation_vectors(triples, p)
    out, _ = _mlp_forward(_canonical_sum(g)[None, :], p.f, p.f_acts)
    return float(out[0, 0])


# --------------------------------------------------------------------------
# batched training graph
# --------------------------------------------------------------------------

_ROLE_ORDER = ("identification", "behavior", "status")


def _sample_ids(sample, enc: EncoderParams) -> list[tuple[int, int, int]]:
    out = []
    for t in sample.triples:
        i, s, b = triple_tokens(t)
        out.append((enc.token_id(i), enc.token_id(b), enc.token_id(s)))
    return out


class _Batch:
    """Index bookkeeping for a mini-batch of samples."""

    def __init__(self, sample_ids: list[list[tuple[int, int, int]]], labels, enc: EncoderParams):
        tag_ids = [enc.token_id(ROLE_TAGS[r]) for r in _ROLE_ORDER]
        uniq: dict[tuple[int, int], int] = {}
        rows = []
        owner = []
        for n, trips in enumerate(sample_ids):
            for trip in trips:
                row = []
                for slot, tok in enumerate(trip):
                    key = (tag_ids[slot], tok)
                    if key not in uniq:
                        uniq[key] = len(uniq)
                    row.append(uniq[key])
                rows.append(row)
                owner.append(n)
        self.seq_ids = np.array(list(uniq.keys()), dtype=np.int64).reshape(-1, 2)
        self.rows = np.array(rows, dtype=np.int64)
        self.owner = np.array(owner, dtype=np.int64)
        self.n = len(sample_ids)
        self.y = np.asarray(labels, dtype=np.float64)


def _forward_loss(batch: _Batch, rn: RnParams, enc: EncoderParams, keep: bool = True):
    h, lstm_cache = _lstm_forward(batch.seq_ids, enc, keep=keep)
    x = h[batch.rows].reshape(len(batch.rows), 3 * HIDDEN)
    g, g_cache = _mlp_forward(x, rn.g, rn.g_acts, keep=keep)
    s = np.zeros((batch.n, g.shape[1]))
    np.add.at(s, batch.owner, g)
    p, f_cache = _mlp_forward(s, rn.f, rn.f_acts, keep=keep)
    p = p[:, 0]
    pc = np.clip(p, 1e-12, 1.0 - 1e-12)
    loss = float(-np.mean(batch.y * np.log(pc) + (1.0 - batch.y) * np.log(1.0 - pc)))
    return loss, p, (h, lstm_cache, g_cache, f_cache)


def _backward(batch: _Batch, rn: RnParams, enc: EncoderParams, p: np.ndarray, cache) -> dict[str, np.ndarray]:
    h, lstm_cache, g_cache, f_cache = cache
    # sigmoid + BCE: gradient w.r.t. the output pre-activation
    dlogit = ((p - batch.y) / batch.n)[:, None]
    ds, f_grads = _mlp_backward(rn.f, rn.f_acts, f_cache, dlogit, skip_last_act=True)
    dg = ds[batch.owner]
    dx, g_grads = _mlp_backward(rn.g, rn.g_acts, g_cache, dg)
    dh = np.zeros_like(h)
    np.add.at(dh, batch.rows.reshape(-1), dx.reshape(-1, HIDDEN))
    dE, dW, dU, db = _lstm_backward(batch.seq_ids, enc, lstm_cache, dh)
    grads = {"embed": dE, "W": dW, "U": dU, "b": db}
    for k, (gw, gb) in enumerate(g_grads):
        grads[f"g{k}.W"] = gw
        grads[f"g{k}.b"] = gb
    for k, (gw, gb) in enumerate(f_grads):
        grads[f"f{k}.W"] = gw
        grads[f"f{k}.b"] = gb
    return grads


def param_arrays(rn: RnParams, enc: EncoderParams) -> dict[str, np.ndarray]:
    """Name -> live parameter array (mutating the array mutates the bundle)."""
    out = {"embed": enc.embed, "W": enc.W, "U": enc.U, "b": enc.b}
    for k, (W, b) in enumerate(rn.g):
        out[f"g{k}.W"] = W
        out[f"g{k}.b"] = b
    for k, (W, b) in enumerate(rn.f):
        out[f"f{k}.W"] = W
        out[f"f{k}.b"] = b
    return out


def loss_and_grads(rn: RnParams, enc: EncoderParams, samples: Sequence[TrainSample]):
    batch = _Batch([_sample_ids(s, enc) for s in samples], [s.label for s in samples], enc)
    loss, p, cache = _forward_loss(batch, rn, enc)
    return loss, _backward(batch, rn, enc, p, cache)


def predict(rn: RnParams, enc: EncoderParams, samples: Sequence[TrainSample]) -> np.ndarray:
    """Scores for many samples at once (same arithmetic as training)."""
    if not samples:
        return np.zeros(0)
    batch = _Batch([_sample_ids(s, enc) for s in samples], [s.label for s in samples], enc)
    _, p, _ = _forward_loss(batch, rn, enc, keep=False)
    return p


class TrainResult(NamedTuple):
    rn: RnParams
    encoder: EncoderParams
    losses: list[float]
    degenerate: bool


def train(data: Sequence[TrainSample], epochs: int = 2000, lr: float = 0.05, seed: int = 0,
          momentum: float = 0.9, batch_size: int = 32, input_dim: int = 16,
          g_sizes=(96, 64, 64), f_sizes=(64, 32, 1), vocab: Iterable[str] = ()) -> TrainResult:
    """Fit the encoder and both MLPs with binary cross-entropy and momentum SGD.

    One loss value per epoch (sample-weighted mean of the batch losses).
    Equal seeds give bit-identical parameters.
    """
    if epochs < 1:
        raise InvalidInput("epochs must be >= 1")
    if not data:
        raise InvalidInput("empty training set")
    labels = {s.label for s in data}
    degenerate = len(labels) < 2
    if degenerate:
        warnings.warn(f"training data has a single label class {labels}", DegenerateDataset, stacklevel=2)

    tokens = set(vocab)
    for s in data:
        for t in s.triples:
            tokens.update(triple_tokens(t))
    rn, enc = init_params(tokens, seed=seed, input_dim=input_dim, g_sizes=g_sizes, f_sizes=f_sizes)
    rng = np.random.default_rng(seed + 1)
    ids = [_sample_ids(s, enc) for s in data]
    ys = np.array([s.label for s in data], dtype=np.float64)
    params = param_arrays(rn, enc)
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    losses = []
    n = len(data)
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            batch = _Batch([ids[k] for k in idx], ys[idx], enc)
            loss, p, cache = _forward_loss(batch, rn, enc)
            grads = _backward(batch, rn, enc, p, cache)
            for k, arr in params.items():
                v = velocity[k]
                v *= momentum
                v -= lr * grads[k]
                arr += v
            total += loss * len(idx)
        losses.append(total / n)
    return TrainResult(rn, enc, losses, degenerate)


def accuracy(rn: RnParams, enc: EncoderParams, samples: Sequence[TrainSample], threshold: float = 0.5) -> float:
    if not samples:
        return float("nan")
    p = predict(rn, enc, samples)
    y = np.array([s.label for s in samples])
    return float(np.mean((p >= threshold).astype(int) == y))


class GradCheck(NamedTuple):
    max_rel_error: float
    probed: int
    kinks: int      # probes skipped because the +-eps step flips a ReLU


def _relu_pattern(rn: RnParams, cache) -> list[np.ndarray]:
    _, _, g_cache, f_cache = cache
    out = []
    for acts, layer_cache in ((rn.g_acts, g_cache), (rn.f_acts, f_cache)):
        for a, (_, z, _) in zip(acts, layer_cache):
            if a == "relu":
                out.append(z > 0.0)
    return out


def grad_check_stats(rn: RnParams, enc: EncoderParams, sample: TrainSample, eps: float = 1e-5,
                     max_per_array: int | None = None, seed: int = 0) -> GradCheck:
    """Compare backprop with central finite differences coordinate by coordinate.

    Where both gradients are below ``eps`` in magnitude the absolute
    difference is used instead of the relative one.  A probe whose +eps and
    -eps evaluations put some ReLU on different sides of zero straddles a
    kink, where no derivative exists; it is counted in ``kinks`` and left out
    of the error.  With ``max_per_array`` only that many seeded coordinates
    of each parameter array are probed.
    """
    if not 0.0 < eps <= 1e-2:
        raise InvalidInput("eps must lie in (0, 1e-2]")
    rng = np.random.default_rng(seed)
    rn = rn.copy()
    enc = enc.copy()
    _, analytic = loss_and_grads(rn, enc, [sample])
    batch = _Batch([_sample_ids(sample, enc)], [sample.label], enc)
    worst = 0.0
    probed = kinks = 0
    for name, arr in param_arrays(rn, enc).items():
        flat = arr.reshape(-1)
        ga = analytic[name].reshape(-1)
        coords = range(flat.size)
        if max_per_array is not None and flat.size > max_per_array:
            coords = sorted(int(k) for k in rng.choice(flat.size, max_per_array, replace=False))
        for k in coords:
            old = flat[k]
            flat[k] = old + eps
            lp, _, cp = _forward_loss(batch, rn, enc, keep=True)
            flat[k] = old - eps
            lm, _, cm = _forward_loss(batch, rn, enc, keep=True)
            flat[k] = old
            if any(np.any(a != b) for a, b in zip(_relu_pattern(rn, cp), _relu_pattern(rn, cm))):
                kinks += 1
                continue
            probed += 1
            num = (lp - lm) / (2.0 * eps)
            denom = max(abs(num), abs(ga[k]))
            err = abs(num - ga[k]) if denom < eps else abs(num - ga[k]) / denom
            worst = max(worst, err)
    return GradCheck(worst, probed, kinks)


def grad_check(rn: RnParams, enc: EncoderParams, sample: TrainSample, eps: float = 1e-5,
               max_per_array: int | None = None, seed: int = 0) -> float:
    """Worst relative error between backprop and central differences (see :func:`grad_check_stats`)."""
    return grad_check_stats(rn, enc, sample, eps, max_per_array, seed).max_rel_error


# --------------------------------------------------------------------------
# cached scorer used by the simulator
# --------------------------------------------------------------------------


class RelationScorer:
    """Memoizing front end over a trained (rn, encoder) pair.

    Parameters are treated as frozen once wrapped.
    """

    def __init__(self, rn: RnParams, enc: EncoderParams):
        self.rn = rn
        self.enc = enc
        self._enc_cache: dict[tuple[str, str], np.ndarray] = {}
        self._vec_cache: dict[tuple[str, str, str], np.ndarray] = {}
        self._score_cache: dict[tuple[str, str, str], float] = {}

    def encode(self, role: str, token: str) -> np.ndarray:
        key = (role, token)
        v = self._enc_cache.get(key)
        if v is None:
            v = encode_entity(role, token, self.enc)
            self._enc_cache[key] = v
        return v

    def encoded(self, triple) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        i, s, b = triple_tokens(triple)
        return (self.encode("identification", i), self.encode("behavior", b), self.encode("status", s))

    def relation_vector(self, triple) -> np.ndarray:
        key = triple_tokens(triple)
        v = self._vec_cache.get(key)
        if v is None:
            v = relation_vectors([self.encoded(key)], self.rn)[0]
            self._vec_cache[key] = v
        return v

    def score(self, triple) -> float:
        key = triple_tokens(triple)
        s = self._score_cache.get(key)
        if s is None:
            s = rn_score([self.encoded(key)], self.rn)
            self._score_cache[key] = s
        return s

    def score_set(self, triples: Sequence) -> float:
        return rn_score([self.encoded(t) for t in triples], self.rn)


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------


def _arr(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(x) for x in a.reshape(-1)]}


def _unarr(d: dict) -> np.ndarray:
    return np.array(d["data"], dtype=np.float64).reshape(d["shape"])


def model_to_dict(rn: RnParams, enc: EncoderParams, meta: dict | None = None) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "meta": meta or {},
        "encoder": {
            "hidden": HIDDEN,
            "gates": list(GATES),
            "vocab": list(enc.vocab),
            "embed": _arr(enc.embed),
            "W": _arr(enc.W),
            "U": _arr(enc.U),
            "b": _arr(enc.b),
        },
        "rn": {
            "g": [{"W": _arr(W), "b": _arr(b)} for W, b in rn.g],
            "f": [{"W": _arr(W), "b": _arr(b)} for W, b in rn.f],
            "g_acts": list(rn.g_acts),
            "f_acts": list(rn.f_acts),
        },
    }


def model_from_dict(d: dict) -> tuple[RnParams, EncoderParams]:
    if d.get("format") != MODEL_FORMAT:
        raise InvalidInput(f"not a relation-net model document (format={d.get('format')!r})")
    if d.get("version") != MODEL_VERSION:
        raise InvalidInput(f"unsupported model version {d.get('version')!r}")
    e = d["encoder"]
    if e.get("hidden") != HIDDEN:
        raise InvalidInput("encoder hidden size must be 32")
    enc = EncoderParams(list(e["vocab"]), _unarr(e["embed"]), _unarr(e["W"]), _unarr(e["U"]), _unarr(e["b"]))
    r = d["rn"]
    rn = RnParams([(_unarr(l["W"]), _unarr(l["b"])) for l in r["g"]],
                  [(_unarr(l["W"]), _unarr(l["b"])) for l in r["f"]],
                  list(r["g_acts"]), list(r["f_acts"]))
    return rn, enc


def dumps_model(rn: RnParams, enc: EncoderParams, meta: dict | None = None) -> str:
    return json.dumps(model_to_dict(rn, enc, meta), sort_keys=True)


def loads_model(text: str) -> tuple[RnParams, EncoderParams]:
    return model_from_dict(json.loads(text))
