"""Labeled text records, JSON-lines I/O and the bundled review corpus.

The bundled corpus is a seeded, template-generated two-class Chinese review
set (hotels, films, products). Every template slot is drawn from a small word
lexicon so the same lexicon doubles as the segmenter dictionary.
"""
from __future__ import annotations

import json
import random
import unicodedata
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence


@dataclass(frozen=True)
class LabeledText:
    text: str
    label: int

    def __post_init__(self):
        if not normalize_text(self.text):
            raise ValueError("text is empty after normalization")
        if int(self.label) != self.label or self.label < 0:
            raise ValueError(f"label must be a nonnegative integer, got {self.label!r}")


def normalize_text(text: str) -> str:
    return unicodedata.normalize("NFC", text).strip()


def load_jsonl(path) -> list[LabeledText]:
    """Read a dataset with one ``{"text": ..., "label": ...}`` object per line."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rows.append(LabeledText(normalize_text(obj["text"]), int(obj["label"])))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad dataset row ({exc})") from exc
    return rows


def save_jsonl(rows: Iterable[LabeledText], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps({"text": row.text, "label": row.label}, ensure_ascii=False) + "\n")


def split_xy(rows: Sequence[LabeledText]) -> tuple[list[str], list[int]]:
    return [r.text for r in rows], [r.label for r in rows]


# ---------------------------------------------------------------------------
# Review corpus lexicon

ASPECTS = [
    "房间", "服务", "前台", "早餐", "环境", "位置", "价格", "剧情", "演员", "画面",
    "音乐", "质量", "包装", "快递", "味道", "设施", "卫生", "态度", "床铺", "窗户",
]
ADVERBS = ["很", "非常", "特别", "真的", "十分", "相当", "挺", "超级", "格外", "太"]
POSITIVE = [
    "干净", "舒服", "不错", "满意", "精彩", "漂亮", "方便", "热情", "周到", "划算",
    "温馨", "好吃", "优秀", "完美", "喜欢", "好看", "实惠", "安静", "贴心", "细致",
]
NEGATIVE = [
    "糟糕", "失望", "难吃", "肮脏", "吵闹", "无聊", "难看", "冷淡", "麻烦", "破旧",
    "恶心", "敷衍", "差劲", "垃圾", "昂贵", "拥挤", "粗糙", "难受", "后悔", "烦人",
]
OPENERS = [
    ["这次", "入住"], ["昨天", "和", "朋友", "去", "了"], ["第一次", "来", "这里"],
    ["整体", "来说"], ["周末", "带", "家人", "来"], ["出差", "住", "了", "两晚"],
    ["看完", "以后"], ["买回来", "以后"], ["我", "觉得"], ["说实话"],
]
POSITIVE_CLOSINGS = [
    ["下次", "还会", "再来"], ["强烈", "推荐", "给", "大家"], ["值得", "一试"],
    ["总体", "非常", "满意"], ["五星", "好评"], ["会", "推荐", "朋友"],
]
NEGATIVE_CLOSINGS = [
    ["再也", "不会", "来", "了"], ["不", "推荐", "大家", "去"], ["真是", "浪费", "钱"],
    ["非常", "生气"], ["一星", "差评"], ["劝", "大家", "别", "买"],
]
MINOR_TO_POSITIVE = ["只有", "还算"]  # praise clause inside a negative review
MINOR_TO_NEGATIVE = ["就是", "有点"]  # complaint clause inside a positive review


def lexicon_words() -> list[str]:
    """All words the corpus templates are assembled from, sorted."""
    words = set(ASPECTS) | set(ADVERBS) | set(POSITIVE) | set(NEGATIVE)
    for group in (OPENERS, POSITIVE_CLOSINGS, NEGATIVE_CLOSINGS):
        for phrase in group:
            words.update(phrase)
    words.update(MINOR_TO_POSITIVE + MINOR_TO_NEGATIVE)
    return sorted(words)


def _clause(rng: random.Random, polarity: int) -> str:
    adjs = POSITIVE if polarity == 1 else NEGATIVE
    return rng.choice(ASPECTS) + rng.choice(ADVERBS) + rng.choice(adjs)


def make_review(rng: random.Random, label: int) -> str:
    parts = []
    if rng.random() < 0.8:
        parts.append("".join(rng.choice(OPENERS)))
    parts.append(_clause(rng, label))
    if rng.random() < 0.7:
        parts.append(_clause(rng, label))
    if rng.random() < 0.2:
        if label == 1:
            lead, link = MINOR_TO_NEGATIVE
            parts.append(lead + rng.choice(ASPECTS) + link + rng.choice(NEGATIVE))
        else:
            lead, link = MINOR_TO_POSITIVE
            parts.append(lead + rng.choice(ASPECTS) + link + rng.choice(POSITIVE))
    closings = POSITIVE_CLOSINGS if label == 1 else NEGATIVE_CLOSINGS
    end = rng.choice(["！", "。"])
    return "，".join(parts) + "。" + "".join(rng.choice(closings)) + end


def make_review_corpus(n: int = 2000, seed: int = 0) -> list[LabeledText]:
    """Balanced two-class corpus; label 1 is positive."""
    rng = random.Random(seed)
    labels = [i % 2 for i in range(n)]
    rng.shuffle(labels)
    return [LabeledText(make_review(rng, y), y) for y in labels]


# ---------------------------------------------------------------------------
# Bundled files

def bundled_path(name: str) -> Path:
    return Path(str(resources.files("glyphguard") / "data" / name))


def bundled_chars() -> Path:
    return bundled_path("chars.tsv")


def bundled_dictionary() -> Path:
    return bundled_path("words.txt")


def bundled_reviews() -> Path:
    return bundled_path("reviews.jsonl")


def train_test_split(rows: Sequence[LabeledText], test_size: int | float = 0.2, seed: int = 0):
    """Seeded shuffle split; returns (train, test)."""
    idx = list(range(len(rows)))
    random.Random(seed).shuffle(idx)
    n_test = int(round(test_size * len(rows))) if isinstance(test_size, float) else int(test_size)
    test = [rows[i] for i in idx[:n_test]]
    train = [rows[i] for i in idx[n_test:]]
    return train, test
