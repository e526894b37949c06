"""Character-level transformer classifier with a frozen graph-embedding channel.

Forward pass in ``full_fusion`` mode, for a text padded/truncated to ``l``::

    H1  = LM(x)                         (l, d1)   contextual character states
    H2  = node_table[x]                 (l, d2)   frozen, zeros for OOV/padding
    H3  = W^T flatten(T1(H2)) + b       (d1,)
    H3' = repeat(H3, l)                 (l, d1)
    H4  = T2(fuse_proj(H1 ++ H3'))      (l, d1)
    p   = softmax(head(flatten(H4)))

``baseline`` classifies ``flatten(H1)`` alone; ``graph_concat`` classifies
``flatten(H1 ++ H3')`` directly, without ``fuse_proj`` and ``T2``. Padded
positions are masked as attention keys and zeroed before every flatten, so
padding never influences the output.
"""
from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted
from torch import nn
from torch.nn import functional as F

from ._validation import EmptyTextError, LabelRangeError, check_labels, check_text, check_texts
from .datasets import LabeledText
from .graphembed import EmbeddingTable, file_sha256

logger = logging.getLogger(__name__)

MODES = ("baseline", "graph_concat", "full_fusion")
LAYERS = ("H1", "H3", "H4")
CHECKPOINT_MAGIC = b"GLYPHGUARD-FUSION v1\n"
PAD, UNK = 0, 1


class UnknownLayerError(ValueError):
    pass


@dataclass(frozen=True)
class FusionConfig:
    d1: int = 128
    d2: int = 64
    l: int = 64
    lm_layers: int = 2
    lm_heads: int = 4
    t1_layers: int = 1
    t1_heads: int = 2
    t2_layers: int = 1
    n_classes: int = 2
    dropout: float = 0.1
    seed: int = 0
    mode: str = "full_fusion"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("d1", "d2", "l", "lm_layers", "lm_heads", "t1_layers", "t1_heads", "t2_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.d1 % self.lm_heads:
            raise ValueError("d1 must be divisible by lm_heads")
        if self.d2 % self.t1_heads:
            raise ValueError("d2 must be divisible by t1_heads")
        if self.n_classes < 2:
            raise ValueError("n_classes must be at least 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


# ---------------------------------------------------------------------------
# network

class SelfAttention(nn.Module):
    def __init__(self, width: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(width, 3 * width)
        self.out = nn.Linear(width, width)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, key_mask):
        b, n, w = x.shape
        q, k, v = self.qkv(x).view(b, n, 3, self.heads, w // self.heads).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-1, -2) / math.sqrt(w // self.heads)
        scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        attn = self.drop(torch.softmax(scores, dim=-1))
        return self.out((attn @ v).transpose(1, 2).reshape(b, n, w))


class EncoderLayer(nn.Module):
    """Post-norm transformer encoder block."""

    def __init__(self, width: int, heads: int, dropout: float):
        super().__init__()
        self.attn = SelfAttention(width, heads, dropout)
        self.ff = nn.Sequential(nn.Linear(width, 4 * width), nn.GELU(), nn.Linear(4 * width, width))
        self.norm1 = nn.LayerNorm(width)
        self.norm2 = nn.LayerNorm(width)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, key_mask):
        x = self.norm1(x + self.drop(self.attn(x, key_mask)))
        return self.norm2(x + self.drop(self.ff(x)))


class Encoder(nn.Module):
    def __init__(self, width: int, heads: int, layers: int, dropout: float):
        super().__init__()
        self.layers = nn.ModuleList(EncoderLayer(width, heads, dropout) for _ in range(layers))

    def forward(self, x, key_mask):
        for layer in self.layers:
            x = layer(x, key_mask)
        return x


class FusionNet(nn.Module):
    def __init__(self, cfg: FusionConfig, vocab_size: int, node_matrix: torch.Tensor | None):
        super().__init__()
        self.cfg = cfg
        l, d1, d2 = cfg.l, cfg.d1, cfg.d2
        self.tok_emb = nn.Embedding(vocab_size, d1, padding_idx=PAD)
        self.pos_emb = nn.Embedding(l, d1)
        self.emb_norm = nn.LayerNorm(d1)
        self.emb_drop = nn.Dropout(cfg.dropout)
        self.lm = Encoder(d1, cfg.lm_heads, cfg.lm_layers, cfg.dropout)
        if cfg.mode != "baseline":
            if node_matrix is None:
                raise ValueError(f"mode {cfg.mode} needs a node embedding table")
            # frozen: a buffer, never a parameter, so no optimizer can reach it
            self.register_buffer("node_emb", node_matrix.clone())
            self.t1 = Encoder(d2, cfg.t1_heads, cfg.t1_layers, cfg.dropout)
            self.proj = nn.Linear(l * d2, d1)      # W, b
        if cfg.mode == "full_fusion":
            self.fuse_proj = nn.Linear(2 * d1, d1)
            self.t2 = Encoder(d1, cfg.lm_heads, cfg.t2_layers, cfg.dropout)
        head_in = {"baseline": l * d1, "graph_concat": 2 * l * d1, "full_fusion": l * d1}[cfg.mode]
        self.head = nn.Linear(head_in, cfg.n_classes)

    def encode_pretrained(self, tokens, mask):
        pos = torch.arange(tokens.shape[1], device=tokens.device)
        x = self.emb_drop(self.emb_norm(self.tok_emb(tokens) + self.pos_emb(pos)[None]))
        return self.lm(x, mask)

    def encode_nodes(self, node_ids):
        return self.node_emb[node_ids]

    def forward(self, tokens, node_ids, mask, return_all: bool = False):
        cfg = self.cfg
        b, l = tokens.shape
        keep = mask[..., None].to(self.head.weight.dtype)
        h1 = self.encode_pretrained(tokens, mask)
        assert h1.shape == (b, l, cfg.d1)
        out = {"H1": h1}
        if cfg.mode == "baseline":
            z = (h1 * keep).reshape(b, -1)
        else:
            h2 = self.encode_nodes(node_ids)
            assert h2.shape == (b, l, cfg.d2)
            t1 = self.t1(h2, mask)
            assert t1.shape == (b, l, cfg.d2)
            h3 = self.proj((t1 * keep).reshape(b, l * cfg.d2))
            assert h3.shape == (b, cfg.d1)
            h3r = h3[:, None, :].expand(b, l, cfg.d1)
            cat = torch.cat([h1, h3r], dim=-1)
            assert cat.shape == (b, l, 2 * cfg.d1)
            out.update(H2=h2, T1=t1, H3=h3)
            if cfg.mode == "graph_concat":
                z = (cat * keep).reshape(b, -1)
            else:
                h4 = self.t2(self.fuse_proj(cat), mask)
                assert h4.shape == (b, l, cfg.d1)
                out["H4"] = h4
                z = (h4 * keep).reshape(b, -1)
        logits = self.head(z)
        if return_all:
            out["logits"] = logits
            return out
        return logits


# ---------------------------------------------------------------------------
# estimator

class FusionClassifier(ClassifierMixin, BaseEstimator):
    """Text classifier over raw strings; one token per Unicode character.

    Parameters mirror :class:`FusionConfig` plus the training schedule.
    ``node_table`` is an :class:`~glyphguard.graphembed.EmbeddingTable` and is
    required unless ``mode="baseline"``; its vectors are copied into a frozen
    buffer at ``fit`` time and never updated.
    """

    def __init__(self, mode="full_fusion", node_table=None, d1=128, max_len=64, lm_layers=2,
                 lm_heads=4, t1_layers=1, t1_heads=2, t2_layers=1, n_classes=None, dropout=0.1,
                 epochs=10, batch_size=32, lr=1e-3, optimizer="adam", weight_decay=0.0, seed=0,
                 verbose=False):
        self.mode = mode
        self.node_table = node_table
        self.d1 = d1
        self.max_len = max_len
        self.lm_layers = lm_layers
        self.lm_heads = lm_heads
        self.t1_layers = t1_layers
        self.t1_heads = t1_heads
        self.t2_layers = t2_layers
        self.n_classes = n_classes
        self.dropout = dropout
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.optimizer = optimizer
        self.weight_decay = weight_decay
        self.seed = seed
        self.verbose = verbose

    # -- tokenization -------------------------------------------------------
    def _encode(self, texts: Sequence[str]):
        l = self.config_.l
        n = len(texts)
        tokens = np.zeros((n, l), dtype=np.int64)
        nodes = np.zeros((n, l), dtype=np.int64)
        for i, t in enumerate(texts):
            chars = list(t)[:l]
            tokens[i, :len(chars)] = [self.vocab_.get(c, UNK) for c in chars]
            nodes[i, :len(chars)] = [self.node_index_.get(ord(c), 0) for c in chars]
        tokens = torch.from_numpy(tokens)
        return tokens, torch.from_numpy(nodes), tokens != PAD

    def _build(self, texts, n_classes):
        d2 = self.node_table.dim if self.node_table is not None else 1
        self.config_ = FusionConfig(
            d1=self.d1, d2=d2, l=self.max_len, lm_layers=self.lm_layers, lm_heads=self.lm_heads,
            t1_layers=self.t1_layers, t1_heads=self.t1_heads if self.node_table is not None else 1,
            t2_layers=self.t2_layers, n_classes=n_classes, dropout=self.dropout, seed=self.seed,
            mode=self.mode)
        chars = sorted({c for t in texts for c in t})
        self.vocab_ = {c: i + 2 for i, c in enumerate(chars)}
        self._init_network()

    def _init_network(self):
        node_matrix = None
        self.node_index_ = {}
        if self.node_table is not None and self.config_.mode != "baseline":
            cps = sorted(self.node_table.vectors)
            self.node_index_ = {cp: i + 1 for i, cp in enumerate(cps)}
            rows = [self.node_table.oov_vector] + [self.node_table.vectors[cp] for cp in cps]
            node_matrix = torch.tensor(np.array(rows), dtype=torch.float32)
        with torch.random.fork_rng():
            torch.manual_seed(self.seed)
            self.net_ = FusionNet(self.config_, len(self.vocab_) + 2, node_matrix)
        self.classes_ = np.arange(self.config_.n_classes)

    def fit(self, X, y):
        texts = check_texts(X)
        y = check_labels(y, self.n_classes)
        if not texts:
            raise ValueError("empty training set")
        if len(texts) != len(y):
            raise ValueError("X and y differ in length")
        n_classes = self.n_classes or max(2, int(y.max()) + 1)
        self._build(texts, n_classes)
        self.history_ = []
        self._train(texts, y, self.epochs)
        return self

    def _make_optimizer(self):
        params = [p for p in self.net_.parameters() if p.requires_grad]
        if self.optimizer == "sgd":
            return torch.optim.SGD(params, lr=self.lr, weight_decay=self.weight_decay)
        if self.optimizer == "adam":
            return torch.optim.Adam(params, lr=self.lr, weight_decay=self.weight_decay)
        raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def _train(self, texts, y, epochs):
        tokens, nodes, mask = self._encode(texts)
        target = torch.from_numpy(np.asarray(y))
        opt = self._make_optimizer()
        gen = torch.Generator().manual_seed(self.seed)
        n = len(texts)
        with torch.random.fork_rng():
            torch.manual_seed(self.seed + 1)
            for epoch in range(epochs):
                self.net_.train()
                order = torch.randperm(n, generator=gen)
                total_loss = 0.0
                correct = 0
                for start in range(0, n, self.batch_size):
                    idx = order[start:start + self.batch_size]
                    logits = self.net_(tokens[idx], nodes[idx], mask[idx])
                    loss = F.cross_entropy(logits, target[idx])
                    opt.zero_grad()
                    loss.backward()
                    opt.step()
                    total_loss += loss.item() * len(idx)
                    correct += (logits.argmax(1) == target[idx]).sum().item()
                row = {"epoch": epoch + 1, "loss": total_loss / n, "accuracy": correct / n}
                self.history_.append(row)
                if self.verbose:
                    logger.info("epoch %(epoch)d loss %(loss).4f acc %(accuracy).4f", row)

    # -- inference ------------------------------------------------------------
    def _forward(self, texts, return_all=False, chunk=256):
        check_is_fitted(self, "net_")
        texts = check_texts(texts)
        self.net_.eval()
        outs = []
        with torch.no_grad():
            for start in range(0, len(texts), chunk):
                tokens, nodes, mask = self._encode(texts[start:start + chunk])
                outs.append(self.net_(tokens, nodes, mask, return_all=return_all))
        return outs

    def decision_function(self, X) -> np.ndarray:
        outs = self._forward(list(X))
        if not outs:
            return np.zeros((0, self.config_.n_classes))
        return torch.cat(outs).double().numpy()

    def predict_proba(self, X) -> np.ndarray:
        logits = self.decision_function(X)
        if not len(logits):
            return logits
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def representations(self, X, layer: str) -> np.ndarray:
        if layer not in LAYERS:
            raise UnknownLayerError(f"layer must be one of {LAYERS}, got {layer!r}")
        outs = self._forward(list(X), return_all=True)
        if not outs:
            width = {"H1": self.config_.l * self.config_.d1, "H3": self.config_.d1,
                     "H4": self.config_.l * self.config_.d1}[layer]
            return np.zeros((0, width))
        if layer not in outs[0]:
            raise UnknownLayerError(f"layer {layer} does not exist in mode {self.config_.mode}")
        return torch.cat([o[layer].reshape(o[layer].shape[0], -1) for o in outs]).double().numpy()


# ---------------------------------------------------------------------------
# operation-level API

def encode_pretrained(model: FusionClassifier, text: str) -> np.ndarray:
    """H1 for one text, shape (l, d1)."""
    text = check_text(text)
    return model._forward([text], return_all=True)[0]["H1"][0].double().numpy()


def encode_nodes(model: FusionClassifier, text: str) -> np.ndarray:
    """H2 for one text, shape (l, d2); OOV characters and padding give zero rows."""
    check_is_fitted(model, "net_")
    cfg = model.config_
    out = np.zeros((cfg.l, cfg.d2))
    if model.node_table is None:
        return out
    for i, ch in enumerate(list(text)[:cfg.l]):
        out[i] = model.node_table.lookup(ord(ch))
    return out


def fuse_forward(model: FusionClassifier, text: str) -> np.ndarray:
    return model.predict_proba([check_text(text)])[0]


def predict(model: FusionClassifier, text: str) -> tuple[int, np.ndarray]:
    probs = fuse_forward(model, text)
    return int(np.argmax(probs)), probs


def train(model: FusionClassifier, dataset: Sequence[LabeledText], epochs: int | None = None,
          batch_size: int | None = None, lr: float | None = None) -> list[dict]:
    """Fit ``model`` on ``dataset`` and return the per-epoch loss/accuracy report."""
    if not dataset:
        raise ValueError("empty dataset")
    overrides = {k: v for k, v in (("epochs", epochs), ("batch_size", batch_size), ("lr", lr)) if v is not None}
    model.set_params(**overrides)
    model.fit([d.text for d in dataset], [d.label for d in dataset])
    return list(model.history_)


def export_representations(model: FusionClassifier, texts: Sequence[str], layer: str, path) -> np.ndarray:
    """Write one row per text of the flattened representation ``layer``."""
    mat = model.representations(texts, layer)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# layer={layer} rows={mat.shape[0]} cols={mat.shape[1]}\n")
        for row in mat:
            fh.write(" ".join(f"{x:.6g}" for x in row) + "\n")
    return mat


# ---------------------------------------------------------------------------
# checkpoints

_CONFIG_KEYS = ("mode", "d1", "max_len", "lm_layers", "lm_heads", "t1_layers", "t1_heads",
                "t2_layers", "n_classes", "dropout", "epochs", "batch_size", "lr", "optimizer",
                "weight_decay", "seed")


def save_checkpoint(model: FusionClassifier, path, embedding_path=None) -> None:
    """Header line, JSON metadata line, then float32 parameters in manifest order.

    The node table is not stored; the checkpoint names its embedding file and
    pins it by SHA-256.
    """
    check_is_fitted(model, "net_")
    state = {k: v for k, v in model.net_.state_dict().items() if k != "node_emb"}
    meta = {
        "params": {k: getattr(model, k) for k in _CONFIG_KEYS},
        "config": asdict(model.config_),
        "vocab": "".join(sorted(model.vocab_, key=model.vocab_.get)),
        "embedding": None,
        "tensors": [[k, list(v.shape)] for k, v in state.items()],
    }
    meta["params"]["n_classes"] = model.config_.n_classes
    if model.config_.mode != "baseline":
        if embedding_path is None:
            raise ValueError("a graph-channel model must reference its embedding file")
        meta["embedding"] = {"path": str(Path(embedding_path).resolve()), "sha256": file_sha256(embedding_path)}
    blob = json.dumps(meta, ensure_ascii=False, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for v in state.values():
            fh.write(v.detach().to(torch.float32).contiguous().numpy().astype("<f4").tobytes())


class CheckpointError(ValueError):
    pass


def load_checkpoint(path, embedding_path=None) -> FusionClassifier:
    with open(path, "rb") as fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a fusion checkpoint")
        (n,) = struct.unpack("<Q", fh.read(8))
        meta = json.loads(fh.read(n).decode("utf-8"))
        raw = fh.read()
    table = None
    if meta["embedding"] is not None:
        emb_path = embedding_path or meta["embedding"]["path"]
        digest = file_sha256(emb_path)
        if digest != meta["embedding"]["sha256"]:
            raise CheckpointError(f"embedding file {emb_path} does not match the checkpoint hash")
        table = EmbeddingTable.load(emb_path)
    model = FusionClassifier(node_table=table, **meta["params"])
    model.config_ = FusionConfig(**meta["config"])
    model.vocab_ = {c: i + 2 for i, c in enumerate(meta["vocab"])}
    model._init_network()
    state = {}
    offset = 0
    for name, shape in meta["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape)
        state[name] = torch.from_numpy(arr.copy())
        offset += 4 * count
    if offset != len(raw):
        raise CheckpointError(f"{path}: parameter payload size mismatch")
    if "node_emb" in model.net_.state_dict():
        state["node_emb"] = model.net_.node_emb
    model.net_.load_state_dict(state)
    model.history_ = []
    return model
