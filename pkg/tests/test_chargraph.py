import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glyphguard.chargraph import (
    AdvGraph, CharacterRecord, Edge, GraphError, SimilarityWeights, UnknownCodepointError, build_graph,
    glyph_similarity, lcs_length, load_character_table, load_graph, neighbors, normalize_pinyin, save_graph,
)
from glyphguard.datasets import bundled_chars


def brute_lcs(a, b):
    best = 0
    for i in range(len(a)):
        for j in range(i + 1, len(a) + 1):
            sub = tuple(a[i:j])
            n = len(sub)
            if n > best and any(tuple(b[k:k + n]) == sub for k in range(len(b) - n + 1)):
                best = n
    return best


def rec(ch, pinyins, strokes, **kw):
    return CharacterRecord.from_strings(ch, pinyins, strokes, **kw)


def test_table_line_example(tmp_path):
    p = tmp_path / "t.tsv"
    p.write_text("# comment\nU+535A\tbo2\t12345112154\n", encoding="utf-8")
    (r,) = load_character_table(p)
    assert r.char == "博"
    assert r.pinyins == {"bo"}
    assert r.stroke_code == (1, 2, 3, 4, 5, 1, 1, 2, 1, 5, 4)


def test_table_errors(tmp_path):
    dup = tmp_path / "dup.tsv"
    dup.write_text("U+535A\tbo2\t1234\n博\tbo\t12\n", encoding="utf-8")
    with pytest.raises(GraphError, match="duplicate"):
        load_character_table(dup)
    bad = tmp_path / "bad.tsv"
    bad.write_text("U+535A\tbo2\t1234\nU+83E0\tbo\n", encoding="utf-8")
    with pytest.raises(GraphError, match=":2:"):
        load_character_table(bad)
    empty = tmp_path / "empty.tsv"
    empty.write_text("# nothing\n", encoding="utf-8")
    with pytest.raises(GraphError, match="empty"):
        load_character_table(empty)
    with pytest.raises(GraphError, match="alphabet"):
        p = tmp_path / "alpha.tsv"
        p.write_text("U+535A\tbo\t1239\n", encoding="utf-8")
        load_character_table(p, alphabet=range(1, 6))


def test_record_invariants():
    with pytest.raises(ValueError):
        CharacterRecord(ord("a"), frozenset({"a"}), (1,))
    with pytest.raises(ValueError):
        CharacterRecord(ord("博"), frozenset(), (1,))
    with pytest.raises(ValueError):
        CharacterRecord(ord("博"), frozenset({"bo"}), ())


def test_normalize_pinyin():
    assert normalize_pinyin("bo2") == "bo"
    assert normalize_pinyin("Bó") == "bo"
    assert normalize_pinyin("lü4") == "lv"


def test_bundled_table_size():
    assert len(load_character_table(bundled_chars())) == 500


def test_glyph_similarity_examples():
    a = rec("博", ["bo"], "1234")
    assert glyph_similarity(a, a) == 1.0
    assert glyph_similarity(rec("博", ["bo"], "111"), rec("菠", ["bo"], "222")) == 0.0
    w = SimilarityWeights(alpha=1.0)
    assert glyph_similarity(rec("博", ["bo"], "1234"), rec("菠", ["bo"], "9237"), w) == 0.5


def test_visual_term_mixes_in():
    a = rec("博", ["bo"], "1234", visual_feature=np.array([1.0, 0.0]))
    b = rec("菠", ["bo"], "1234", visual_feature=np.array([0.0, 1.0]))
    # lcs term 1, visual term 1 - sqrt(2)/2
    assert glyph_similarity(a, b) == pytest.approx(0.7 + 0.3 * (1 - np.sqrt(2) / 2))


def test_lcs_matches_brute_force_on_1000_pairs():
    rng = random.Random(0)
    for _ in range(1000):
        a = [rng.randint(1, 5) for _ in range(rng.randint(1, 12))]
        b = [rng.randint(1, 5) for _ in range(rng.randint(1, 12))]
        assert lcs_length(a, b) == brute_lcs(a, b)


codes = st.lists(st.integers(1, 5), min_size=1, max_size=12)


@given(codes, codes)
@settings(max_examples=200, deadline=None)
def test_symmetry(a, b):
    ra = CharacterRecord(ord("博"), frozenset({"bo"}), tuple(a))
    rb = CharacterRecord(ord("菠"), frozenset({"bo"}), tuple(b))
    assert glyph_similarity(ra, rb) == glyph_similarity(rb, ra)
    assert lcs_length(a, b) == brute_lcs(a, b)


def test_build_examples():
    g = build_graph([rec("博", ["bo2"], "12345112154"), rec("菠", ["bo1"], "122543")])
    assert g.edge(ord("博"), ord("菠")).kind in ("phonetic", "both")
    single = build_graph([rec("博", ["bo"], "1")])
    assert len(single) == 1 and not single.edges
    with pytest.raises(GraphError):
        build_graph([rec("博", ["bo"], "1")], glyph_threshold=0.0)
    with pytest.raises(GraphError):
        build_graph([rec("博", ["bo"], "1")], glyph_threshold=1.5)


def test_neighbors_order_and_filter():
    A, B, C = ord("一"), ord("丁"), ord("七")
    g = AdvGraph({A: None, B: None, C: None},
                 {(A, C): Edge("phonetic", 0.9), (A, B): Edge("glyph", 0.9)})
    assert neighbors(g, A) == [(B, 0.9), (C, 0.9)]
    assert neighbors(g, A, "phonetic") == [(C, 0.9)]
    iso = AdvGraph({A: None}, {})
    assert neighbors(iso, A) == []
    with pytest.raises(UnknownCodepointError):
        neighbors(g, ord("博"))


def test_graph_invariants_rejected():
    A, B = ord("一"), ord("丁")
    with pytest.raises(GraphError):
        AdvGraph({A: None}, {(A, A): Edge("glyph", 1.0)})
    with pytest.raises(GraphError):
        AdvGraph({A: None}, {(A, B): Edge("glyph", 1.0)})
    with pytest.raises(GraphError):
        AdvGraph({A: None, B: None}, {(A, B): Edge("glyph", 1.0), (B, A): Edge("glyph", 1.0)})


def test_fuzzy_initials_opt_in():
    recs = [rec("知", ["zhi"], "1"), rec("资", ["zi"], "2")]
    assert not build_graph(recs).edges
    assert build_graph(recs, fuzzy_initials=True).edge(ord("知"), ord("资")).kind == "phonetic"


def test_frequency_cutoff_excludes_rare():
    recs = [rec("博", ["bo"], "12", frequency_rank=1), rec("菠", ["bo"], "34", frequency_rank=900)]
    assert build_graph(recs).edges
    g = build_graph(recs, frequency_cutoff=100)
    assert not g.edges and len(g) == 2


@pytest.fixture(scope="module")
def bundled():
    records = load_character_table(bundled_chars())
    return records, build_graph(records)


def test_edge_soundness(bundled):
    records, g = bundled
    by_cp = {r.codepoint: r for r in records}
    for (a, b), e in g.edges.items():
        ra, rb = by_cp[a], by_cp[b]
        assert a != b
        assert 0.0 <= e.score <= 1.0
        if e.kind in ("phonetic", "both"):
            assert ra.pinyins & rb.pinyins
        if e.kind in ("glyph", "both"):
            assert glyph_similarity(ra, rb) >= g.glyph_threshold
        if e.kind == "phonetic":
            assert glyph_similarity(ra, rb) < g.glyph_threshold


def test_threshold_monotone(bundled):
    records, _ = bundled
    sub = records[:200]
    prev = None
    for t in (0.4, 0.5, 0.6, 0.8):
        g = build_graph(sub, glyph_threshold=t)
        glyph = {k for k, e in g.edges.items() if e.kind in ("glyph", "both")}
        if prev is not None:
            assert glyph <= prev
        prev = glyph


def test_roundtrip(tmp_path, bundled):
    _, g = bundled
    p = tmp_path / "g.advg"
    save_graph(g, p)
    h = load_graph(p)
    assert set(h.nodes) == set(g.nodes)
    assert {k: e.kind for k, e in h.edges.items()} == {k: e.kind for k, e in g.edges.items()}
    assert h.glyph_threshold == g.glyph_threshold and h.candidate_cap == g.candidate_cap
    save_graph(h, tmp_path / "h.advg")
    assert (tmp_path / "h.advg").read_bytes() == p.read_bytes()
    assert p.read_text(encoding="utf-8").startswith("ADVGRAPH v1\n")


def test_bad_graph_file(tmp_path):
    p = tmp_path / "x"
    p.write_text("NOT A GRAPH\n")
    with pytest.raises(GraphError):
        load_graph(p)
