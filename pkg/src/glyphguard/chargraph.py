"""Phonetic/glyph adversarial graph over Chinese characters.

Nodes are characters; an undirected edge joins two characters that share a
toneless pinyin reading (``phonetic``), whose glyph similarity reaches the
threshold (``glyph``), or both. Glyph similarity mixes the longest common
substring of the two stroke codes with an optional externally computed visual
feature distance.
"""
from __future__ import annotations

import logging
import math
import re
import unicodedata
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

STROKE_DIGITS = frozenset(range(1, 10))
EDGE_KINDS = ("phonetic", "glyph", "both")
GRAPH_HEADER = "ADVGRAPH v1"

# (start, end) inclusive, CJK Unified Ideographs and extensions A-H
_CJK_BLOCKS = (
    (0x4E00, 0x9FFF), (0x3400, 0x4DBF), (0x20000, 0x2A6DF),
    (0x2A700, 0x2EBEF), (0x30000, 0x323AF),
)
_PINYIN_RE = re.compile(r"[a-z]+")
_FUZZY_INITIALS = (("zh", "z"), ("ch", "c"), ("sh", "s"), ("n", "l"))


def is_cjk(codepoint: int) -> bool:
    return any(lo <= codepoint <= hi for lo, hi in _CJK_BLOCKS)


def normalize_pinyin(raw: str) -> str:
    """Lowercase ASCII pinyin with tone digits and tone marks removed; ü -> v."""
    s = raw.strip().lower().replace("u:", "v").replace("ü", "v")
    s = "".join(c for c in unicodedata.normalize("NFD", s) if not unicodedata.combining(c))
    return s.rstrip("012345")


def parse_codepoint(token: str) -> int:
    token = token.strip()
    if token[:2].upper() == "U+":
        return int(token[2:], 16)
    if len(token) == 1:
        return ord(token)
    raise ValueError(f"bad codepoint {token!r}")


def format_codepoint(cp: int) -> str:
    return f"U+{cp:04X}"


class GraphError(ValueError):
    pass


class UnknownCodepointError(KeyError):
    pass


@dataclass(frozen=True)
class CharacterRecord:
    codepoint: int
    pinyins: frozenset
    stroke_code: tuple
    frequency_rank: int | None = None
    visual_feature: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if not is_cjk(self.codepoint):
            raise ValueError(f"{format_codepoint(self.codepoint)} is not a CJK unified ideograph")
        if not self.pinyins or not all(_PINYIN_RE.fullmatch(p) for p in self.pinyins):
            raise ValueError(f"bad pinyin set {sorted(self.pinyins)} for {self.char}")
        if not self.stroke_code or not all(s in STROKE_DIGITS for s in self.stroke_code):
            raise ValueError(f"bad stroke code {self.stroke_code} for {self.char}")
        if self.frequency_rank is not None and self.frequency_rank < 1:
            raise ValueError("frequency_rank must be positive")

    @property
    def char(self) -> str:
        return chr(self.codepoint)

    @classmethod
    def from_strings(cls, char: str, pinyins: Iterable[str], strokes: str, **kw):
        return cls(ord(char), frozenset(normalize_pinyin(p) for p in pinyins),
                   tuple(int(c) for c in strokes), **kw)


def load_character_table(path, alphabet: Iterable[int] = STROKE_DIGITS) -> list[CharacterRecord]:
    """Parse ``codepoint<TAB>pinyin,...<TAB>strokes[<TAB>freq_rank]`` lines."""
    alphabet = frozenset(alphabet)
    records: list[CharacterRecord] = []
    seen: dict[int, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            cols = line.split("\t")
            try:
                if len(cols) not in (3, 4):
                    raise ValueError(f"expected 3 or 4 columns, got {len(cols)}")
                cp = parse_codepoint(cols[0])
                pinyins = frozenset(normalize_pinyin(p) for p in cols[1].split(",") if p.strip())
                strokes = tuple(int(c) for c in cols[2].strip())
                if any(s not in alphabet for s in strokes):
                    raise ValueError(f"stroke digit outside alphabet {sorted(alphabet)}")
                rank = int(cols[3]) if len(cols) == 4 and cols[3].strip() else None
                record = CharacterRecord(cp, pinyins, strokes, rank)
            except ValueError as exc:
                raise GraphError(f"{path}:{lineno}: {exc}") from exc
            if cp in seen:
                raise GraphError(f"{path}:{lineno}: duplicate codepoint "
                                 f"{format_codepoint(cp)} (first on line {seen[cp]})")
            seen[cp] = lineno
            records.append(record)
    if not records:
        raise GraphError(f"{path}: character table is empty")
    return records


def load_visual_features(path) -> dict[int, np.ndarray]:
    feats = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                cp_s, vec_s = line.rstrip("\n").split("\t")
                feats[parse_codepoint(cp_s)] = np.array([float(v) for v in vec_s.split(",")])
            except ValueError as exc:
                raise GraphError(f"{path}:{lineno}: {exc}") from exc
    dims = {v.shape[0] for v in feats.values()}
    if len(dims) > 1:
        raise GraphError(f"{path}: inconsistent feature dimensions {sorted(dims)}")
    return feats


def attach_visual_features(records: Sequence[CharacterRecord],
                           features: Mapping[int, np.ndarray]) -> list[CharacterRecord]:
    return [replace(r, visual_feature=features.get(r.codepoint, r.visual_feature)) for r in records]


# ---------------------------------------------------------------------------
# similarity

def lcs_length(a: Sequence, b: Sequence) -> int:
    """Length of the longest common contiguous run of ``a`` and ``b``."""
    if len(a) < len(b):
        a, b = b, a
    best = 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, 1):
            if x == y:
                v = prev[j - 1] + 1
                cur[j] = v
                if v > best:
                    best = v
        prev = cur
    return best


@dataclass(frozen=True)
class SimilarityWeights:
    alpha: float = 0.7  # weight on the stroke-code term

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


def stroke_score(a: CharacterRecord, b: CharacterRecord) -> float:
    return lcs_length(a.stroke_code, b.stroke_code) / max(len(a.stroke_code), len(b.stroke_code))


def visual_score(fa: np.ndarray, fb: np.ndarray) -> float:
    # ||fa - fb|| <= ||fa|| + ||fb||, so the ratio lies in [0, 1]
    denom = float(np.linalg.norm(fa)) + float(np.linalg.norm(fb))
    if denom == 0.0:
        return 1.0
    return 1.0 - float(np.linalg.norm(fa - fb)) / denom


def glyph_similarity(a: CharacterRecord, b: CharacterRecord,
                     weights: SimilarityWeights = SimilarityWeights()) -> float:
    lcs = stroke_score(a, b)
    if a.visual_feature is None or b.visual_feature is None:
        return lcs
    return weights.alpha * lcs + (1.0 - weights.alpha) * visual_score(a.visual_feature, b.visual_feature)


def _sound_key(p: str, fuzzy: bool) -> str:
    if fuzzy:
        for long, short in _FUZZY_INITIALS:
            if p.startswith(long):
                return short + p[len(long):]
    return p


# ---------------------------------------------------------------------------
# graph

@dataclass(frozen=True)
class Edge:
    kind: str
    score: float


class AdvGraph:
    """Immutable undirected character graph with typed, scored edges."""

    def __init__(self, nodes: Mapping[int, CharacterRecord | None],
                 edges: Mapping[tuple[int, int], Edge],
                 glyph_threshold: float | None = None, candidate_cap: int | None = None):
        self.nodes = dict(nodes)
        self.edges: dict[tuple[int, int], Edge] = {}
        self.glyph_threshold = glyph_threshold
        self.candidate_cap = candidate_cap
        adj: dict[int, list] = {cp: [] for cp in self.nodes}
        for (a, b), e in edges.items():
            if a == b:
                raise GraphError(f"self-loop on {format_codepoint(a)}")
            if a not in self.nodes or b not in self.nodes:
                raise GraphError(f"edge endpoint missing: {format_codepoint(a)}-{format_codepoint(b)}")
            if e.kind not in EDGE_KINDS:
                raise GraphError(f"unknown edge kind {e.kind!r}")
            key = (a, b) if a < b else (b, a)
            if key in self.edges:
                raise GraphError(f"duplicate edge {format_codepoint(a)}-{format_codepoint(b)}")
            self.edges[key] = e
            adj[a].append((b, e.score, e.kind))
            adj[b].append((a, e.score, e.kind))
        for lst in adj.values():
            lst.sort(key=lambda t: (-t[1], t[0]))
        self._adj = {cp: tuple(lst) for cp, lst in adj.items()}

    def __contains__(self, cp) -> bool:
        return cp in self.nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def degree(self, cp: int) -> int:
        return len(self._adj[cp])

    def adjacent(self, cp: int) -> tuple[int, ...]:
        """Every neighbor of ``cp``, uncapped, in score order."""
        return tuple(t[0] for t in self._adj[cp])

    def edge(self, a: int, b: int) -> Edge | None:
        return self.edges.get((a, b) if a < b else (b, a))

    def counts(self) -> dict:
        kinds = {k: 0 for k in EDGE_KINDS}
        for e in self.edges.values():
            kinds[e.kind] += 1
        return {"nodes": len(self.nodes), "edges": len(self.edges), **kinds}

    def neighbors(self, cp: int, kind: str = "all") -> list[tuple[int, float]]:
        return neighbors(self, cp, kind)


def neighbors(graph: AdvGraph, codepoint: int, kind: str = "all") -> list[tuple[int, float]]:
    """Neighbors sorted by score descending then codepoint ascending.

    ``kind`` is ``"all"``, ``"phonetic"``, ``"glyph"`` (both match edges of kind
    ``"both"`` too) or ``"both"``. The list is truncated to the graph's
    candidate cap.
    """
    if codepoint not in graph._adj:
        raise UnknownCodepointError(format_codepoint(codepoint) if isinstance(codepoint, int) else codepoint)
    if kind == "all":
        keep = EDGE_KINDS
    elif kind in ("phonetic", "glyph"):
        keep = (kind, "both")
    elif kind == "both":
        keep = ("both",)
    else:
        raise ValueError(f"unknown edge-kind filter {kind!r}")
    out = [(cp, s) for cp, s, k in graph._adj[codepoint] if k in keep]
    if graph.candidate_cap is not None:
        out = out[: graph.candidate_cap]
    return out


def build_graph(records: Sequence[CharacterRecord], glyph_threshold: float = 0.5,
                candidate_cap: int | None = 40, weights: SimilarityWeights = SimilarityWeights(),
                fuzzy_initials: bool = False, frequency_cutoff: int | None = None) -> AdvGraph:
    if not records:
        raise GraphError("no records")
    if not 0.0 < glyph_threshold <= 1.0:
        raise GraphError(f"glyph_threshold must lie in (0, 1], got {glyph_threshold}")
    if candidate_cap is not None and candidate_cap < 1:
        raise GraphError("candidate_cap must be positive")
    nodes = {}
    for r in records:
        if r.codepoint in nodes:
            raise GraphError(f"duplicate codepoint {format_codepoint(r.codepoint)}")
        nodes[r.codepoint] = r
    linkable = [r for r in records
                if frequency_cutoff is None or r.frequency_rank is None or r.frequency_rank <= frequency_cutoff]

    phonetic: dict[tuple[int, int], float] = {}
    by_sound: dict[str, list[CharacterRecord]] = {}
    sounds = {r.codepoint: {_sound_key(p, fuzzy_initials) for p in r.pinyins} for r in linkable}
    for r in linkable:
        for s in sounds[r.codepoint]:
            by_sound.setdefault(s, []).append(r)
    for group in by_sound.values():
        for a, b in combinations(group, 2):
            key = (a.codepoint, b.codepoint) if a.codepoint < b.codepoint else (b.codepoint, a.codepoint)
            if key not in phonetic:
                sa, sb = sounds[a.codepoint], sounds[b.codepoint]
                phonetic[key] = len(sa & sb) / len(sa | sb)

    glyph: dict[tuple[int, int], float] = {}
    for a, b in combinations(linkable, 2):
        la, lb = len(a.stroke_code), len(b.stroke_code)
        bound = min(la, lb) / max(la, lb)
        if a.visual_feature is not None and b.visual_feature is not None:
            bound = weights.alpha * bound + (1.0 - weights.alpha)
        if bound < glyph_threshold:
            continue
        s = glyph_similarity(a, b, weights)
        if s >= glyph_threshold:
            key = (a.codepoint, b.codepoint) if a.codepoint < b.codepoint else (b.codepoint, a.codepoint)
            glyph[key] = s

    edges = {}
    for key in phonetic.keys() | glyph.keys():
        if key in phonetic and key in glyph:
            edges[key] = Edge("both", max(phonetic[key], glyph[key]))
        elif key in phonetic:
            edges[key] = Edge("phonetic", phonetic[key])
        else:
            edges[key] = Edge("glyph", glyph[key])
    graph = AdvGraph(nodes, edges, glyph_threshold, candidate_cap)
    logger.info("built graph: %s", graph.counts())
    return graph


# ---------------------------------------------------------------------------
# serialization

def save_graph(graph: AdvGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(GRAPH_HEADER + "\n")
        if graph.glyph_threshold is not None:
            fh.write(f"# glyph_threshold={graph.glyph_threshold!r}\n")
        if graph.candidate_cap is not None:
            fh.write(f"# candidate_cap={graph.candidate_cap}\n")
        for cp in sorted(graph.nodes):
            fh.write(f"N {format_codepoint(cp)}\n")
        for (a, b) in sorted(graph.edges):
            e = graph.edges[(a, b)]
            fh.write(f"E {format_codepoint(a)} {format_codepoint(b)} {e.kind} {e.score:.6f}\n")


def load_graph(path, records: Sequence[CharacterRecord] | None = None) -> AdvGraph:
    """Read a graph file; ``records`` optionally restores node payloads."""
    payload = {r.codepoint: r for r in records or ()}
    nodes: dict[int, CharacterRecord | None] = {}
    edges = {}
    meta = {}
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().strip()
        if first != GRAPH_HEADER:
            raise GraphError(f"{path}: missing '{GRAPH_HEADER}' header")
        for lineno, line in enumerate(fh, 2):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                meta[k.strip()] = v.strip()
                continue
            parts = line.split()
            try:
                if parts[0] == "N" and len(parts) == 2:
                    cp = parse_codepoint(parts[1])
                    nodes[cp] = payload.get(cp)
                elif parts[0] == "E" and len(parts) == 5:
                    a, b = parse_codepoint(parts[1]), parse_codepoint(parts[2])
                    edges[(a, b)] = Edge(parts[3], float(parts[4]))
                else:
                    raise ValueError(f"unrecognized line {line!r}")
            except ValueError as exc:
                raise GraphError(f"{path}:{lineno}: {exc}") from exc
    threshold = float(meta["glyph_threshold"]) if "glyph_threshold" in meta else None
    cap = int(meta["candidate_cap"]) if "candidate_cap" in meta else None
    return AdvGraph(nodes, edges, threshold, cap)


def text_coverage(graph: AdvGraph, texts: Iterable[str]) -> float:
    """Fraction of characters in ``texts`` that are graph nodes."""
    total = hit = 0
    for t in texts:
        for ch in t:
            total += 1
            hit += ord(ch) in graph.nodes
    return hit / total if total else math.nan
