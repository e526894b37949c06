import math

import numpy as np
import pytest

from conftest import oracle_labeled
from glyphguard.attackkit import AttackConfig, ClassifierHandle
from glyphguard.augmentor import (
    PRESETS, AugmentAborted, AugmentConfig, AugmentReport, augment, check_report, conventional_augment,
    preset_epsilon, required_chains_lower_bound, save_augmented,
)
from glyphguard.chargraph import AdvGraph, Edge
from glyphguard.datasets import LabeledText, load_jsonl
from glyphguard.targets import LinearOracleAdapter

SRC = "甲乙丙丁戊己庚辛壬癸"      # ten one-character words
SUB = "子丑寅卯辰巳午未申酉"      # one neighbor each


@pytest.fixture
def scripted(tmp_path):
    """Each substitution lowers the class-0 margin by 4; the margin starts at 10."""
    nodes = {ord(c): None for c in SRC + SUB}
    edges = {(ord(a), ord(b)): Edge("glyph", 1.0) for a, b in zip(SRC, SUB)}
    weights = {ord(c): [1.0, 0.0] for c in SRC}
    weights.update({ord(c): [-3.0, 0.0] for c in SUB})
    d = tmp_path / "dict.txt"
    d.write_text("", encoding="utf-8")
    return AdvGraph(nodes, edges, candidate_cap=40), LinearOracleAdapter(weights), str(d)


def cfg(eps, dict_path, algo="pwws", **kw):
    return AugmentConfig(eps, AttackConfig(algo, segmenter_dict=dict_path), **kw)


class AlwaysOne(ClassifierHandle):
    n_classes = 2

    def _predict_probs(self, texts):
        return np.tile([0.1, 0.9], (len(texts), 1))


def test_misclassified_everything(scripted):
    g, _, d = scripted
    D = [LabeledText(SRC, 0), LabeledText(SRC[:5], 0)]
    D_ag, rep = augment(D, AlwaysOne(), g, cfg(0.45, d))
    assert D_ag == D
    assert rep.generated == 0 and rep.skipped_misclassified == 2 and rep.n_chains == 0


def test_three_step_chain_included(scripted):
    g, f, d = scripted
    D = [LabeledText(SRC, 0)]
    D_ag, rep = augment(D, f, g, cfg(0.45, d))
    assert len(D_ag) == 3 + 1 and D_ag[-1] == D[0]
    assert all(x.label == 0 for x in D_ag)
    assert rep.generated == 3 and rep.n_chains == 1
    assert rep.chains[0].final_mr == pytest.approx(0.3)
    labels = np.argmax(f.predict_probs([x.text for x in D_ag[:3]]), axis=1)
    assert list(labels) == [0, 0, 1]  # intermediates correct, final one adversarial
    check_report(rep)


@pytest.mark.parametrize("eps", [0.3, 0.25])
def test_chain_at_or_over_budget_rejected(scripted, eps):
    g, f, d = scripted
    D = [LabeledText(SRC, 0)]
    D_ag, rep = augment(D, f, g, cfg(eps, d))
    assert D_ag == D and rep.generated == 0 and rep.n_chains == 0


def test_early_stop_size_bound(linear_setup, reviews):
    f, graph = linear_setup
    D = oracle_labeled([r.text for r in reviews[:200]], f)
    for ratio in (0.1, 0.3):
        D_ag, rep = augment(D, f, graph, AugmentConfig(0.45, AttackConfig("textbugger"), stop_ratio=ratio))
        assert rep.stopped_early
        last = rep.chains[-1].size
        assert len(D_ag) <= math.ceil(ratio * len(D)) + last + len(D)
        assert rep.generated > ratio * len(D)
        assert rep.sources_consumed < len(D)
        assert rep.chain_budget() >= rep.generated - 1e-9
        check_report(rep)


def test_label_preservation_and_soundness(linear_setup, reviews):
    f, graph = linear_setup
    D = oracle_labeled([r.text for r in reviews[:150]], f)
    D_ag, rep = augment(D, f, graph, AugmentConfig(0.3, AttackConfig("pwws"), stop_ratio=5.0))
    src_label = {x.text: x.label for x in D}
    pos = 0
    for c in rep.chains:
        assert c.final_mr < 0.3
        chain = D_ag[pos:pos + c.size]
        assert all(x.label == src_label[c.source] for x in chain)
        assert all(len(x.text) == c.length for x in chain)
        pos += c.size
    assert pos == rep.generated
    assert D_ag[rep.generated:] == D
    assert rep.n_chains * rep.avg_source_length * rep.epsilon_max >= rep.generated
    check_report(rep)


def test_jobs_do_not_change_result(linear_setup, reviews):
    f, graph = linear_setup
    D = oracle_labeled([r.text for r in reviews[:80]], f)
    c = AugmentConfig(0.45, AttackConfig("textbugger"), stop_ratio=0.5)
    a, ra = augment(D, f, graph, c)
    b, rb = augment(D, f, graph, c, jobs=3)
    assert a == b and ra.chains == rb.chains and ra.sources_consumed == rb.sources_consumed


def test_shuffle_seed(linear_setup, reviews):
    f, graph = linear_setup
    D = oracle_labeled([r.text for r in reviews[:60]], f)
    c0 = AugmentConfig(0.45, AttackConfig("textbugger"), stop_ratio=0.2, shuffle_seed=0)
    c1 = AugmentConfig(0.45, AttackConfig("textbugger"), stop_ratio=0.2, shuffle_seed=1)
    assert augment(D, f, graph, c0)[0] == augment(D, f, graph, c0)[0]
    assert augment(D, f, graph, c0)[1].chains != augment(D, f, graph, c1)[1].chains


class Flaky(ClassifierHandle):
    n_classes = 2

    def __init__(self, inner, fail_after):
        super().__init__()
        self.inner, self.left = inner, fail_after

    def _predict_probs(self, texts):
        self.left -= 1
        if self.left < 0:
            raise ConnectionError("link down")
        return self.inner.predict_probs(texts)


def test_transport_error_aborts_with_partial(scripted):
    g, f, d = scripted
    D = [LabeledText(SRC, 0)] * 3
    with pytest.raises(AugmentAborted) as info:
        augment(D, Flaky(f, 13 + 5), g, cfg(0.45, d, shuffle_seed=None))  # one chain costs 13 calls
    rep = info.value.report
    assert rep.generated == len(info.value.partial) == 3 * rep.n_chains
    assert rep.n_chains == 1 and rep.sources_consumed == 1


def test_bound_examples():
    assert required_chains_lower_bound(1000, 50, 0.4) == 50.0
    assert required_chains_lower_bound(1000, 50, 0.2) == 100.0
    with pytest.raises(ValueError):
        required_chains_lower_bound(0, 50, 0.2)


def test_presets():
    assert preset_epsilon("chnsenticorp") == 0.45
    assert preset_epsilon("dmsc", "pwws") == 0.45
    assert all(v == 0.3 for v in PRESETS["thucnews"].values())
    assert [PRESETS["ocnli"][a] for a in ("pwws", "textbugger", "random")] == [0.3, 0.3, 0.1]
    with pytest.raises(ValueError):
        preset_epsilon("imdb")


def test_config_validation():
    with pytest.raises(ValueError):
        AugmentConfig(0.0)
    with pytest.raises(ValueError):
        AugmentConfig(1.5)
    with pytest.raises(ValueError):
        AugmentConfig(0.3, stop_ratio=0)
    with pytest.raises(ValueError):
        augment([], AlwaysOne(), None, AugmentConfig(0.3))


def test_conventional_consumes_everything(linear_setup, reviews):
    f, graph = linear_setup
    D = oracle_labeled([r.text for r in reviews[:40]], f)
    D_adv, rep = conventional_augment(D, f, graph, AttackConfig("textbugger"))
    assert rep.sources_consumed == len(D)
    assert D_adv[rep.generated:] == D
    assert rep.generated == sum(1 for c in rep.chains)


def test_outputs(tmp_path, scripted):
    g, f, d = scripted
    D_ag, rep = augment([LabeledText(SRC, 0)], f, g, cfg(0.45, d))
    side = save_augmented(D_ag, rep, tmp_path / "aug.jsonl")
    assert load_jsonl(tmp_path / "aug.jsonl") == D_ag
    back = AugmentReport.load(side)
    assert back == rep
