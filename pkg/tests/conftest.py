import numpy as np
import pytest

from glyphguard.chargraph import build_graph, load_character_table
from glyphguard.datasets import LabeledText, bundled_chars, bundled_reviews, load_jsonl
from glyphguard.targets import LinearOracleAdapter


@pytest.fixture(scope="session")
def graph():
    return build_graph(load_character_table(bundled_chars()))


@pytest.fixture(scope="session")
def reviews():
    return load_jsonl(bundled_reviews())


def dyadic_weights(chars, seed=0, scale=4):
    """Two-class weights on a 1/scale grid so logit sums are exact in float64."""
    rng = np.random.default_rng(seed)
    return {ord(c): np.array([rng.integers(-8, 9) / scale, 0.0]) for c in sorted(set(chars))}


def oracle_labeled(texts, f):
    """Label each text with the oracle's own prediction so no attack is skipped."""
    probs = f.predict_probs(texts)
    return [LabeledText(t, int(np.argmax(p))) for t, p in zip(texts, probs)]


@pytest.fixture(scope="session")
def linear_setup(graph, reviews):
    chars = set(chr(cp) for cp in graph.nodes) | {c for r in reviews for c in r.text}
    f = LinearOracleAdapter(dyadic_weights(chars))
    return f, graph


# one line per acceptance criterion, filled in by test_acceptance.py
CRITERIA: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
