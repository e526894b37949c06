import numpy as np
import pytest

from glyphguard._validation import (
    EmptyTextError, LabelRangeError, check_labels, check_probabilities, check_text, check_texts,
)
from glyphguard.chargraph import build_graph, load_character_table, text_coverage
from glyphguard.datasets import (
    LabeledText, bundled_chars, bundled_dictionary, bundled_reviews, lexicon_words, load_jsonl,
    make_review_corpus, save_jsonl, train_test_split,
)


def test_labeled_text_validation():
    with pytest.raises(ValueError):
        LabeledText("  ", 0)
    with pytest.raises(ValueError):
        LabeledText("好", -1)


def test_jsonl_roundtrip(tmp_path):
    rows = [LabeledText("服务很好", 1), LabeledText("太差了", 0)]
    save_jsonl(rows, tmp_path / "d.jsonl")
    assert load_jsonl(tmp_path / "d.jsonl") == rows
    (tmp_path / "bad.jsonl").write_text('{"text": "好"}\n', encoding="utf-8")
    with pytest.raises(ValueError, match=":1:"):
        load_jsonl(tmp_path / "bad.jsonl")


def test_bundled_corpus_is_regenerable():
    rows = load_jsonl(bundled_reviews())
    assert rows == make_review_corpus(2000, seed=0)
    assert sum(r.label for r in rows) == 1000
    assert 20 <= np.mean([len(r.text) for r in rows]) <= 35


def test_dictionary_is_the_lexicon():
    words = bundled_dictionary().read_text(encoding="utf-8").split()
    assert sorted(words) == sorted(set(lexicon_words()))


def test_graph_covers_corpus():
    g = build_graph(load_character_table(bundled_chars()))
    assert text_coverage(g, [r.text for r in load_jsonl(bundled_reviews())]) > 0.8


def test_split():
    rows = make_review_corpus(50, seed=1)
    tr, te = train_test_split(rows, 0.2, seed=3)
    assert len(te) == 10 and len(tr) == 40
    assert sorted(tr + te, key=lambda r: r.text) == sorted(rows, key=lambda r: r.text)
    assert train_test_split(rows, 0.2, seed=3) == (tr, te)


def test_validation_helpers():
    assert check_text(" 好 ") == "好"
    with pytest.raises(EmptyTextError):
        check_text("")
    with pytest.raises(TypeError):
        check_texts("好")
    assert list(check_labels([0, 1.0, 2], 3)) == [0, 1, 2]
    with pytest.raises(LabelRangeError):
        check_labels([0, 3], 3)
    with pytest.raises(LabelRangeError):
        check_labels([0.5])
    with pytest.raises(ValueError):
        check_probabilities(np.array([[0.5, 0.6]]), 1, 1e-4)
    with pytest.raises(ValueError):
        check_probabilities(np.array([[0.5, 0.5]]), 2, 1e-4)
