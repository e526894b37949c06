"""node2vec over an :class:`~glyphguard.chargraph.AdvGraph`.

Second-order biased random walks feed a skip-gram model trained with negative
sampling. The learned input vectors become the frozen node-embedding table of
the fusion classifier.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numba
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .chargraph import AdvGraph, format_codepoint, parse_codepoint


@dataclass(frozen=True)
class WalkConfig:
    p: float = 1.0
    q: float = 1.0
    walk_length: int = 40
    walks_per_node: int = 10
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    seed: int = 0

    def __post_init__(self):
        if not (self.p > 0 and self.q > 0):
            raise ValueError("p and q must be positive")
        for name in ("walk_length", "walks_per_node", "window", "negatives", "epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.walk_length < 2:
            raise ValueError("walk_length must be at least 2")
        if self.window >= self.walk_length:
            raise ValueError("window must be shorter than walk_length")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class EmbeddingTable:
    dim: int
    vectors: dict = field(default_factory=dict)  # codepoint -> (dim,) float64

    def __post_init__(self):
        for cp, v in self.vectors.items():
            if v.shape != (self.dim,) or not np.all(np.isfinite(v)):
                raise ValueError(f"bad vector for {format_codepoint(cp)}")

    @property
    def oov_vector(self) -> np.ndarray:
        return np.zeros(self.dim)

    def __contains__(self, cp) -> bool:
        return cp in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def lookup(self, cp: int) -> np.ndarray:
        v = self.vectors.get(cp)
        return self.oov_vector if v is None else v

    def checksum(self) -> str:
        h = hashlib.sha256(str(self.dim).encode())
        for cp in sorted(self.vectors):
            h.update(cp.to_bytes(4, "little"))
            h.update(np.ascontiguousarray(self.vectors[cp], dtype="<f8").tobytes())
        return h.hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{len(self.vectors)} {self.dim}\n")
            for cp in sorted(self.vectors):
                fh.write(format_codepoint(cp) + " " + " ".join(f"{x:.6f}" for x in self.vectors[cp]) + "\n")

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        with open(path, encoding="utf-8") as fh:
            count, dim = (int(x) for x in fh.readline().split())
            vectors = {}
            for line in fh:
                if not line.strip():
                    continue
                cp_s, *vals = line.split()
                if len(vals) != dim:
                    raise ValueError(f"{path}: expected {dim} values for {cp_s}")
                vectors[parse_codepoint(cp_s)] = np.array([float(v) for v in vals])
        if len(vectors) != count:
            raise ValueError(f"{path}: header says {count} vectors, found {len(vectors)}")
        return cls(dim, vectors)


def file_sha256(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


# ---------------------------------------------------------------------------
# walks

class _Transitions:
    """Cached cumulative transition weights keyed by (previous, current)."""

    def __init__(self, graph: AdvGraph, p: float, q: float):
        self.graph = graph
        self.inv_p = 0.0 if math.isinf(p) else 1.0 / p
        self.inv_q = 0.0 if math.isinf(q) else 1.0 / q
        self.nbrs = {cp: np.array(graph.adjacent(cp), dtype=np.int64) for cp in graph.nodes}
        self.nbr_sets = {cp: set(graph.adjacent(cp)) for cp in graph.nodes}
        self._cache: dict = {}

    def weights(self, prev: int, cur: int) -> np.ndarray:
        """Unnormalized weights over ``self.nbrs[cur]`` after stepping prev -> cur."""
        key = (prev, cur)
        w = self._cache.get(key)
        if w is None:
            around = self.nbr_sets[prev]
            w = np.array([self.inv_p if x == prev else (1.0 if x in around else self.inv_q)
                          for x in self.nbrs[cur]])
            self._cache[key] = w
        return w

    def step(self, rng: np.random.Generator, prev: int | None, cur: int) -> int | None:
        nbrs = self.nbrs[cur]
        if len(nbrs) == 0:
            return None
        if prev is None:
            return int(nbrs[rng.integers(len(nbrs))])
        cum = np.cumsum(self.weights(prev, cur))
        total = cum[-1]
        if total <= 0.0:
            return None
        return int(nbrs[min(np.searchsorted(cum, rng.random() * total, side="right"), len(nbrs) - 1)])


def transition_probabilities(graph: AdvGraph, prev: int, cur: int, p: float, q: float) -> dict[int, float]:
    """Exact next-step distribution at ``cur`` having arrived from ``prev``."""
    tr = _Transitions(graph, p, q)
    w = tr.weights(prev, cur)
    return {int(x): float(wi / w.sum()) for x, wi in zip(tr.nbrs[cur], w)}


def walk_rng(seed: int, node_index: int, walk_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), node_index, walk_index]))


def generate_walks(graph: AdvGraph, cfg: WalkConfig) -> list[list[int]]:
    """``walks_per_node`` walks from every node, start nodes in codepoint order.

    Each walk has its own generator derived from (seed, node index, walk
    index), so the result does not depend on the order walks are produced in.
    A walk ends early when the walker reaches a state with no transition mass.
    """
    if len(graph) == 0:
        raise ValueError("graph has no nodes")
    tr = _Transitions(graph, cfg.p, cfg.q)
    walks = []
    for wi in range(cfg.walks_per_node):
        for ni, start in enumerate(sorted(graph.nodes)):
            rng = walk_rng(cfg.seed, ni, wi)
            walk = [start]
            prev = None
            while len(walk) < cfg.walk_length:
                nxt = tr.step(rng, prev, walk[-1])
                if nxt is None:
                    break
                prev = walk[-1]
                walk.append(nxt)
            walks.append(walk)
    return walks


# ---------------------------------------------------------------------------
# skip-gram with negative sampling

def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def _sigmoid(x):
    return np.exp(_log_sigmoid(x))


def sgns_loss_and_grads(v_c: np.ndarray, u_o: np.ndarray, u_neg: np.ndarray):
    """Negative-sampling loss for a batch of (center, context, negatives) triples.

    Shapes: ``v_c`` (B, d), ``u_o`` (B, d), ``u_neg`` (B, K, d). Returns the
    per-triple loss ``-log s(u_o.v_c) - sum_k log s(-u_k.v_c)`` and its
    gradients with respect to each input.
    """
    pos = (v_c * u_o).sum(axis=1)
    neg = np.matmul(u_neg, v_c[:, :, None])[:, :, 0]
    loss = -_log_sigmoid(pos) - _log_sigmoid(-neg).sum(axis=1)
    g_pos = _sigmoid(pos) - 1.0          # d loss / d pos
    g_neg = _sigmoid(neg)                # d loss / d neg
    grad_vc = g_pos[:, None] * u_o + np.matmul(g_neg[:, None, :], u_neg)[:, 0, :]
    grad_uo = g_pos[:, None] * v_c
    grad_un = g_neg[:, :, None] * v_c[:, None, :]
    return loss, grad_vc, grad_uo, grad_un


def _context_pairs(walks: Sequence[Sequence[int]], index: dict, window: int) -> np.ndarray:
    pairs = []
    for walk in walks:
        ids = [index[cp] for cp in walk]
        n = len(ids)
        for i, c in enumerate(ids):
            for j in range(max(0, i - window), min(n, i + window + 1)):
                if j != i:
                    pairs.append((c, ids[j]))
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


@numba.njit(cache=True)
def _sgd_pass(w_in, w_out, pairs, order, negs, lr0, step0, total_steps):
    """One epoch of per-pair SGD on the loss of :func:`sgns_loss_and_grads`."""
    dim = w_in.shape[1]
    k = negs.shape[1]
    grad_vc = np.empty(dim)
    for t in range(order.shape[0]):
        lr = lr0 * max(1e-4, 1.0 - (step0 + t) / total_steps)
        i = order[t]
        c = pairs[i, 0]
        grad_vc[:] = 0.0
        for j in range(k + 1):
            if j == 0:
                o = pairs[i, 1]
                label = 1.0
            else:
                o = negs[i, j - 1]
                label = 0.0
            dot = 0.0
            for d in range(dim):
                dot += w_in[c, d] * w_out[o, d]
            if dot >= 0:
                sig = 1.0 / (1.0 + np.exp(-dot))
            else:
                e = np.exp(dot)
                sig = e / (1.0 + e)
            g = sig - label
            for d in range(dim):
                grad_vc[d] += g * w_out[o, d]
                w_out[o, d] -= lr * g * w_in[c, d]
        for d in range(dim):
            w_in[c, d] -= lr * grad_vc[d]


def train_embeddings(walks: Sequence[Sequence[int]], cfg: WalkConfig, dim: int = 64) -> EmbeddingTable:
    if not walks or not any(walks):
        raise ValueError("no walks to train on")
    if dim < 2:
        raise ValueError("dim must be at least 2")
    vocab = sorted({cp for w in walks for cp in w})
    index = {cp: i for i, cp in enumerate(vocab)}
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed & (2**64 - 1), 0x5EED]))
    w_in = (rng.random((len(vocab), dim)) - 0.5) / dim
    w_out = np.zeros((len(vocab), dim))

    counts = np.bincount([index[cp] for w in walks for cp in w], minlength=len(vocab)).astype(float)
    noise = counts ** 0.75
    noise /= noise.sum()

    pairs = _context_pairs(walks, index, cfg.window)
    total = max(cfg.epochs * len(pairs), 1)
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(pairs))
        negs = rng.choice(len(vocab), size=(len(pairs), cfg.negatives), p=noise)
        _sgd_pass(w_in, w_out, pairs, order, negs, cfg.learning_rate, epoch * len(pairs), total)
    return EmbeddingTable(dim, {cp: w_in[i].copy() for cp, i in index.items()})


class Node2Vec(BaseEstimator, TransformerMixin):
    """node2vec as a transformer: ``fit`` on a graph, ``transform`` codepoints.

    ``transform`` accepts codepoints or single characters and maps nodes that
    were never embedded to the zero vector.
    """

    def __init__(self, dim=64, p=1.0, q=1.0, walk_length=40, walks_per_node=10, window=5,
                 negatives=5, epochs=5, learning_rate=0.025, seed=0):
        self.dim = dim
        self.p = p
        self.q = q
        self.walk_length = walk_length
        self.walks_per_node = walks_per_node
        self.window = window
        self.negatives = negatives
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.seed = seed

    def walk_config(self) -> WalkConfig:
        return WalkConfig(self.p, self.q, self.walk_length, self.walks_per_node, self.window,
                          self.negatives, self.epochs, self.learning_rate, self.seed)

    def fit(self, graph: AdvGraph, y=None):
        cfg = self.walk_config()
        self.walks_ = generate_walks(graph, cfg)
        self.embedding_table_ = train_embeddings(self.walks_, cfg, self.dim)
        self.nodes_ = np.array(sorted(graph.nodes))
        return self

    def transform(self, X: Iterable) -> np.ndarray:
        check_is_fitted(self, "embedding_table_")
        table = self.embedding_table_
        cps = [ord(x) if isinstance(x, str) else int(x) for x in X]
        return np.array([table.lookup(cp) for cp in cps]).reshape(len(cps), table.dim)

    def fit_transform(self, graph: AdvGraph, y=None) -> np.ndarray:
        return self.fit(graph).transform(self.nodes_)
