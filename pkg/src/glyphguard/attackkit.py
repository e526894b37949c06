"""Black-box word-substitution attacks driven by the adversarial graph.

Three search strategies share one substitution space: a candidate for a word
replaces exactly one of its characters with a graph neighbor of that
character. Words come from greedy longest-match segmentation.

* ``pwws``: rank words by the largest true-class confidence drop any of their
  candidates achieves on the original text, then substitute greedily.
* ``textbugger``: rank sentences by single-sentence true-class confidence
  (least confident first), words inside a sentence by the confidence drop
  their removal causes, then substitute greedily.
* ``random``: seeded random word order and random candidate.

Greedy strategies re-score the chosen word's candidates on the current text
and commit the best one only when it lowers the true-class probability.
"""
from __future__ import annotations

import json
import threading
import zlib
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._validation import check_text
from .chargraph import AdvGraph
from .datasets import LabeledText, bundled_dictionary

ALGORITHMS = ("pwws", "textbugger", "random")
DEFAULT_SENTENCE_PUNCT = "。！？!?"


class ClassifierHandle(ABC):
    """Query-counted access to a classifier's class probabilities."""

    def __init__(self):
        self._lock = threading.Lock()
        self._queries = 0

    @property
    def queries(self) -> int:
        return self._queries

    def predict_probs(self, texts: Sequence[str]) -> np.ndarray:
        texts = list(texts)
        probs = self._predict_probs(texts) if texts else np.zeros((0, self.n_classes))
        with self._lock:
            self._queries += len(texts)
        return probs

    @property
    @abstractmethod
    def n_classes(self) -> int: ...

    @abstractmethod
    def _predict_probs(self, texts: list[str]) -> np.ndarray: ...


# ---------------------------------------------------------------------------
# segmentation and candidates

class DictionaryError(OSError):
    pass


class Segmenter:
    """Greedy forward longest-match segmentation over a word list."""

    def __init__(self, words: Iterable[str]):
        self.words = frozenset(w for w in words if w)
        self.max_len = max((len(w) for w in self.words), default=1)

    @classmethod
    def from_file(cls, path) -> "Segmenter":
        return _load_segmenter(str(path))

    def __call__(self, text: str) -> list[str]:
        out = []
        i = 0
        while i < len(text):
            for n in range(min(self.max_len, len(text) - i), 1, -1):
                if text[i:i + n] in self.words:
                    break
            else:
                n = 1
            out.append(text[i:i + n])
            i += n
        return out


@lru_cache(maxsize=16)
def _load_segmenter(path: str) -> Segmenter:
    try:
        with open(path, encoding="utf-8") as fh:
            return Segmenter(line.strip() for line in fh)
    except (OSError, UnicodeDecodeError) as exc:
        raise DictionaryError(f"cannot load segmenter dictionary {path}: {exc}") from exc


def segment(text: str, dict_path=None) -> list[str]:
    return Segmenter.from_file(dict_path or bundled_dictionary())(text)


def candidate_words(word: str, graph: AdvGraph, cap: int = 40) -> list[str]:
    """One-character substitutions of ``word``: position first, then neighbor score."""
    out = []
    for pos, ch in enumerate(word):
        cp = ord(ch)
        if cp not in graph:
            continue
        for nb, _ in graph.neighbors(cp):
            out.append(word[:pos] + chr(nb) + word[pos + 1:])
            if len(out) >= cap:
                return out
    return out


def modification_rate(original: str, text: str) -> float:
    if len(original) != len(text):
        raise ValueError("substitution attacks preserve length")
    return sum(a != b for a, b in zip(original, text)) / len(original)


# ---------------------------------------------------------------------------
# configuration and outcomes

@dataclass(frozen=True)
class AttackConfig:
    algorithm: str = "textbugger"
    candidate_cap: int = 40
    max_mr: float | None = None
    seed: int = 0
    segmenter_dict: str | None = None
    sentence_punct: str = DEFAULT_SENTENCE_PUNCT

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.candidate_cap < 1:
            raise ValueError("candidate_cap must be at least 1")
        if self.max_mr is not None and not 0.0 < self.max_mr <= 1.0:
            raise ValueError("max_mr must lie in (0, 1]")


@dataclass
class AttackOutcome:
    original: LabeledText
    final_text: str
    success: bool
    intermediates: list = field(default_factory=list)
    modification_rate: float = 0.0
    queries: int = 0
    skipped: bool = False
    algorithm: str = ""
    steps: list = field(default_factory=list)  # [word_index, old_word, new_word] per commit

    def to_json(self) -> str:
        d = asdict(self)
        d["original"] = {"text": self.original.text, "label": self.original.label}
        return json.dumps(d, ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "AttackOutcome":
        d = json.loads(line)
        d["original"] = LabeledText(**d["original"])
        return cls(**d)


def save_traces(outcomes: Iterable[AttackOutcome], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for o in outcomes:
            fh.write(o.to_json() + "\n")


def load_traces(path) -> list[AttackOutcome]:
    with open(path, encoding="utf-8") as fh:
        return [AttackOutcome.from_json(line) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# sessions

class _Session:
    """State of one attack on one text: scoring cache, current words, trace."""

    def __init__(self, x: LabeledText, f: ClassifierHandle, graph: AdvGraph, cfg: AttackConfig):
        self.x = x
        self.f = f
        self.graph = graph
        self.cfg = cfg
        self.queries = 0
        self._cache: dict[str, np.ndarray] = {}
        self.words = segment(x.text, cfg.segmenter_dict)
        self.current = list(self.words)
        self.intermediates: list[str] = []
        self.steps: list = []
        self._cands: dict[int, list[str]] = {}

    def probs(self, texts: Sequence[str]) -> list[np.ndarray]:
        todo = list(dict.fromkeys(t for t in texts if t not in self._cache))
        if todo:
            out = self.f.predict_probs(todo)
            self.queries += len(todo)
            for t, p in zip(todo, out):
                self._cache[t] = np.asarray(p, dtype=np.float64)
        return [self._cache[t] for t in texts]

    def true_prob(self, texts: Sequence[str]) -> np.ndarray:
        return np.array([p[self.x.label] for p in self.probs(texts)])

    def label_of(self, text: str) -> int:
        return int(np.argmax(self.probs([text])[0]))

    def candidates(self, i: int) -> list[str]:
        if i not in self._cands:
            self._cands[i] = candidate_words(self.words[i], self.graph, self.cfg.candidate_cap)
        return self._cands[i]

    def text_with(self, i: int, word: str) -> str:
        return "".join(self.current[:i]) + word + "".join(self.current[i + 1:])

    def original_with(self, i: int, word: str) -> str:
        return "".join(self.words[:i]) + word + "".join(self.words[i + 1:])

    @property
    def text(self) -> str:
        return "".join(self.current)

    def commit(self, i: int, word: str) -> bool | None:
        """Apply a substitution; None if it would break the MR budget, else flipped?"""
        new_text = self.text_with(i, word)
        mr = modification_rate(self.x.text, new_text)
        if self.cfg.max_mr is not None and mr > self.cfg.max_mr:
            return None
        self.steps.append([i, self.current[i], word])
        self.current[i] = word
        self.intermediates.append(new_text)
        return self.label_of(new_text) != self.x.label

    def outcome(self, success: bool, skipped: bool = False) -> AttackOutcome:
        final = self.text
        return AttackOutcome(
            original=self.x, final_text=final, success=success,
            intermediates=list(self.intermediates),
            modification_rate=modification_rate(self.x.text, final),
            queries=self.queries, skipped=skipped, algorithm=self.cfg.algorithm,
            steps=[list(s) for s in self.steps])


def _greedy(s: _Session, order: Sequence[int]) -> AttackOutcome:
    for i in order:
        cands = s.candidates(i)
        if not cands:
            continue
        texts = [s.text_with(i, c) for c in cands]
        scores = s.true_prob(texts)
        best = int(np.argmin(scores))  # first minimum = enumeration-order tie break
        if not scores[best] < s.true_prob([s.text])[0]:
            continue
        flipped = s.commit(i, cands[best])
        if flipped is None:
            break
        if flipped:
            return s.outcome(True)
    return s.outcome(False)


def _start(x: LabeledText, f, graph, cfg) -> tuple[_Session, AttackOutcome | None]:
    x = LabeledText(check_text(x.text), x.label)
    s = _Session(x, f, graph, cfg)
    if s.label_of(x.text) != x.label:
        return s, s.outcome(False, skipped=True)
    return s, None


def attack_pwws(x: LabeledText, f: ClassifierHandle, graph: AdvGraph, cfg: AttackConfig) -> AttackOutcome:
    s, done = _start(x, f, graph, cfg)
    if done:
        return done
    base = s.true_prob([x.text])[0]
    priority = []
    for i in range(len(s.words)):
        cands = s.candidates(i)
        if cands:
            drop = base - s.true_prob([s.original_with(i, c) for c in cands]).min()
            priority.append((-drop, i))
    priority.sort()
    return _greedy(s, [i for _, i in priority])


def split_sentences(words: Sequence[str], punct: str = DEFAULT_SENTENCE_PUNCT) -> list[list[int]]:
    """Group word indices into sentences ending at terminal punctuation."""
    groups, cur = [], []
    for i, w in enumerate(words):
        cur.append(i)
        if w and w[-1] in punct:
            groups.append(cur)
            cur = []
    if cur:
        groups.append(cur)
    return groups


def attack_textbugger(x: LabeledText, f: ClassifierHandle, graph: AdvGraph, cfg: AttackConfig) -> AttackOutcome:
    s, done = _start(x, f, graph, cfg)
    if done:
        return done
    sentences = split_sentences(s.words, cfg.sentence_punct)
    sent_texts = ["".join(s.words[i] for i in g) for g in sentences]
    if len(sentences) > 1:
        conf = s.true_prob(sent_texts)
        sent_order = sorted(range(len(sentences)), key=lambda k: (conf[k], k))
    else:
        sent_order = [0]
    base = s.true_prob([x.text])[0]
    order = []
    for k in sent_order:
        ranked = []
        for i in sentences[k]:
            if not s.candidates(i):
                continue
            removed = "".join(s.words[:i] + s.words[i + 1:])
            drop = base - s.true_prob([removed])[0] if removed.strip() else 0.0
            ranked.append((-drop, i))
        ranked.sort()
        order.extend(i for _, i in ranked)
    return _greedy(s, order)


def _session_rng(cfg: AttackConfig, text: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(
        [cfg.seed & (2**64 - 1), zlib.crc32(text.encode("utf-8"))]))


def attack_random(x: LabeledText, f: ClassifierHandle, graph: AdvGraph, cfg: AttackConfig) -> AttackOutcome:
    s, done = _start(x, f, graph, cfg)
    if done:
        return done
    rng = _session_rng(cfg, s.x.text)
    bearing = [i for i in range(len(s.words)) if s.candidates(i)]
    for i in (bearing[j] for j in rng.permutation(len(bearing))):
        cands = s.candidates(i)
        flipped = s.commit(i, cands[int(rng.integers(len(cands)))])
        if flipped is None:
            break
        if flipped:
            return s.outcome(True)
    return s.outcome(False)


_ATTACKS = {"pwws": attack_pwws, "textbugger": attack_textbugger, "random": attack_random}


def attack(x: LabeledText, f: ClassifierHandle, graph: AdvGraph, cfg: AttackConfig) -> AttackOutcome:
    return _ATTACKS[cfg.algorithm](x, f, graph, cfg)


def run_attacks(dataset: Sequence[LabeledText], f: ClassifierHandle, graph: AdvGraph,
                cfg: AttackConfig, jobs: int = 1) -> list[AttackOutcome]:
    """Attack every text; results keep input order whatever ``jobs`` is."""
    if jobs <= 1:
        return [attack(x, f, graph, cfg) for x in dataset]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda x: attack(x, f, graph, cfg), dataset))


def default_dictionary() -> Path:
    return bundled_dictionary()
