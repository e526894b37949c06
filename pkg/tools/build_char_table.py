"""Regenerate src/glyphguard/data/chars.tsv, words.txt and reviews.jsonl.

Inputs (not runtime dependencies of the package):
  * stroke orders from the MIT-licensed ``cnchar-order`` npm package
    (``npm pack cnchar-order`` and pass the path of ``cnchar.order.min.js``)
  * readings from ``pypinyin``; character frequencies from the ``jieba`` dictionary

usage: python tools/build_char_table.py path/to/cnchar.order.min.js [--size 500]
"""
import argparse
import json
import os
import re
import sys
from collections import defaultdict

import jieba
from pypinyin import Style, pinyin

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))
from glyphguard.chargraph import lcs_length  # noqa: E402
from glyphguard.datasets import (  # noqa: E402
    bundled_path, lexicon_words, make_review_corpus, save_jsonl,
)

# cnchar stroke letters -> five standard stroke classes
# 1 horizontal (incl. rising), 2 vertical (incl. vertical hook), 3 left-falling,
# 4 dot (incl. right-falling), 5 every turning stroke
STROKE_CLASS = {"j": "1", "i": "1", "f": "2", "g": "2", "s": "3", "k": "4", "d": "4", "l": "4"}


def load_strokes(js_path):
    src = open(js_path, encoding="utf-8").read()
    table = json.loads(re.findall(r"JSON\.parse\('(\{.*?\})'\)", src)[0])
    return {ch: "".join(STROKE_CLASS.get(c, "5") for c in code) for ch, code in table.items()}


def load_frequencies():
    freq = {}
    with open(os.path.join(os.path.dirname(jieba.__file__), "dict.txt"), encoding="utf-8") as fh:
        for line in fh:
            word, count, *_ = line.split()
            if len(word) == 1 and "一" <= word <= "鿿":
                freq[word] = int(count)
    return freq


def readings(ch):
    return sorted({p for p in pinyin(ch, style=Style.TONE3, heteronym=True)[0] if p.isascii()})


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("cnchar_js")
    ap.add_argument("--size", type=int, default=500)
    ap.add_argument("--pool", type=int, default=3500)
    args = ap.parse_args()

    strokes = load_strokes(args.cnchar_js)
    freq = load_frequencies()
    pool = [ch for ch in sorted(freq, key=lambda c: (-freq[c], c)) if ch in strokes and readings(ch)]
    pool = pool[: args.pool]
    rank = {ch: i + 1 for i, ch in enumerate(pool)}

    def toneless(ch):
        return {r.rstrip("012345") for r in readings(ch)}

    by_sound = defaultdict(list)
    for ch in pool:
        for p in toneless(ch):
            by_sound[p].append(ch)

    core = sorted({ch for w in lexicon_words() for ch in w})
    missing = [ch for ch in core if ch not in strokes]
    if missing:
        raise SystemExit(f"no stroke data for {missing}")
    chosen = dict.fromkeys(core)
    # round-robin: the best homophone and best look-alike of every corpus
    # character first, then second picks, until the table is full
    picks = []
    for ch in core:
        sound = [c for p in sorted(toneless(ch)) for c in by_sound[p] if c != ch]
        homophones = sorted(set(sound), key=lambda c: rank[c])[:3]
        code = strokes[ch]
        scored = []
        for c in pool:
            if c == ch:
                continue
            other = strokes[c]
            s = lcs_length(code, other) / max(len(code), len(other))
            if s >= 0.6:
                scored.append((-s, rank[c], c))
        lookalikes = [c for _, _, c in sorted(scored)[:2]]
        picks.append((homophones, lookalikes))
    for depth in range(3):
        for homophones, lookalikes in picks:
            for group in (homophones, lookalikes):
                if depth < len(group) and len(chosen) < args.size:
                    chosen.setdefault(group[depth])
    for ch in pool:
        if len(chosen) >= args.size:
            break
        chosen.setdefault(ch)

    out = bundled_path("chars.tsv")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("# codepoint\tpinyin\tstrokes (1 horizontal,2 vertical,3 left-falling,4 dot,5 turning)\tfreq_rank\n")
        fh.write("# readings: pypinyin; stroke orders: cnchar-order (MIT); ranks: jieba dictionary\n")
        for ch in sorted(chosen, key=ord):
            fields = [f"U+{ord(ch):04X}", ",".join(readings(ch)), strokes[ch]]
            if ch in rank:
                fields.append(str(rank[ch]))
            fh.write("\t".join(fields) + "\n")
    with open(bundled_path("words.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lexicon_words()) + "\n")
    save_jsonl(make_review_corpus(2000, seed=0), bundled_path("reviews.jsonl"))
    print(f"{len(chosen)} characters ({len(core)} from the corpus lexicon) -> {out}")


if __name__ == "__main__":
    main()
