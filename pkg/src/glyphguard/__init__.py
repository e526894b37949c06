"""Robust Chinese text classification with an adversarial character graph.

Pipeline: :mod:`chargraph` builds the phonetic and glyph similarity graph,
:mod:`graphembed` embeds it with node2vec, :mod:`fusionnet` fuses those
embeddings with a character language model, :mod:`attackkit` attacks
classifiers through the graph, :mod:`augmentor` turns attack chains into
training data and :mod:`evaluator` scores robustness.
"""
from .attackkit import AttackConfig, AttackOutcome, ClassifierHandle, attack, run_attacks
from .augmentor import AugmentConfig, AugmentReport, augment
from .chargraph import AdvGraph, CharacterRecord, build_graph, load_character_table, neighbors
from .datasets import LabeledText
from .evaluator import accuracy, asr_curve, robustness_report
from .fusionnet import FusionClassifier
from .graphembed import EmbeddingTable, Node2Vec

__version__ = "0.1.0"

__all__ = [
    "AdvGraph", "AttackConfig", "AttackOutcome", "AugmentConfig", "AugmentReport", "CharacterRecord",
    "ClassifierHandle", "EmbeddingTable", "FusionClassifier", "LabeledText", "Node2Vec", "accuracy",
    "asr_curve", "attack", "augment", "build_graph", "load_character_table", "neighbors",
    "robustness_report", "run_attacks",
]
