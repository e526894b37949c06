"""Curriculum augmentation: keep every step of a successful, cheap attack chain.

Each correctly classified source text is attacked under an online
modification-rate budget. If the attack flips the label while staying
strictly under ``epsilon_max``, all texts along the way (the final adversarial
one included) join the augmented set under the source's label. Collection
stops once the augmented part outgrows ``stop_ratio`` times the source set,
and the source set is appended at the end.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .attackkit import AttackConfig, AttackOutcome, ClassifierHandle, attack, run_attacks
from .chargraph import AdvGraph
from .datasets import LabeledText, save_jsonl

# epsilon_max per dataset and attack, as used for the reference experiments
PRESETS = {
    "chnsenticorp": {"pwws": 0.45, "textbugger": 0.45, "random": 0.45},
    "dmsc": {"pwws": 0.45, "textbugger": 0.45, "random": 0.45},
    "thucnews": {"pwws": 0.3, "textbugger": 0.3, "random": 0.3},
    "ocnli": {"pwws": 0.3, "textbugger": 0.3, "random": 0.1},
}


def preset_epsilon(name: str, algorithm: str = "textbugger") -> float:
    try:
        return PRESETS[name.lower()][algorithm]
    except KeyError:
        raise ValueError(f"no preset for dataset {name!r} and attack {algorithm!r}; "
                         f"known datasets: {sorted(PRESETS)}") from None


@dataclass(frozen=True)
class AugmentConfig:
    epsilon_max: float
    attack: AttackConfig = field(default_factory=AttackConfig)
    stop_ratio: float = 1.0
    shuffle_seed: int | None = 0  # None keeps the input order

    def __post_init__(self):
        if not 0.0 < self.epsilon_max <= 1.0:
            raise ValueError("epsilon_max must lie in (0, 1]")
        if not self.stop_ratio > 0:
            raise ValueError("stop_ratio must be positive")


@dataclass
class ChainRecord:
    source: str
    label: int
    length: int  # characters in the source text
    final_mr: float
    size: int  # texts contributed


@dataclass
class AugmentReport:
    n_chains: int = 0
    generated: int = 0
    skipped_misclassified: int = 0
    total_queries: int = 0
    avg_source_length: float = 0.0
    epsilon_max: float = 0.0
    sources_consumed: int = 0
    source_size: int = 0
    stopped_early: bool = False
    rejected_chains: int = 0
    chains: list = field(default_factory=list)

    def chain_budget(self) -> float:
        """Sum of l_i * eps_i over accepted chains, an upper bound on ``generated``."""
        return sum(c.length * c.final_mr for c in self.chains)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentReport":
        d = dict(d)
        d["chains"] = [ChainRecord(**c) for c in d.get("chains", [])]
        return cls(**d)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, ensure_ascii=False, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "AugmentReport":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


class AugmentAborted(RuntimeError):
    """Raised when the classifier fails mid-run; carries the partial result."""

    def __init__(self, cause: Exception, report: AugmentReport, partial: list):
        super().__init__(f"augmentation aborted after {report.sources_consumed} sources: {cause}")
        self.report = report
        self.partial = partial


def required_chains_lower_bound(target_size: int, l_avg: float, epsilon_max: float) -> float:
    if target_size <= 0 or l_avg <= 0 or epsilon_max <= 0:
        raise ValueError("all arguments must be positive")
    return target_size / (l_avg * epsilon_max)


def _order(n: int, seed: int | None) -> np.ndarray:
    if seed is None:
        return np.arange(n)
    return np.random.default_rng(np.random.SeedSequence(seed & (2**64 - 1))).permutation(n)


def _accept(out: AttackOutcome, eps: float) -> bool:
    return out.success and out.modification_rate < eps


def augment(D: Sequence[LabeledText], f: ClassifierHandle, graph: AdvGraph, cfg: AugmentConfig,
            jobs: int = 1) -> tuple[list[LabeledText], AugmentReport]:
    """Build the augmented training set; returns ``(D_ag, report)``.

    With ``jobs > 1`` sources are attacked in windows of ``jobs`` and committed
    in order, so the result does not depend on thread scheduling.
    """
    D = list(D)
    if not D:
        raise ValueError("source dataset is empty")
    acfg = replace(cfg.attack, max_mr=cfg.epsilon_max)
    report = AugmentReport(epsilon_max=cfg.epsilon_max, source_size=len(D))
    D_ag: list[LabeledText] = []
    limit = cfg.stop_ratio * len(D)
    order = [D[i] for i in _order(len(D), cfg.shuffle_seed)]

    def commit(out: AttackOutcome) -> bool:
        report.sources_consumed += 1
        report.total_queries += out.queries
        if out.skipped:
            report.skipped_misclassified += 1
            return False
        if not _accept(out, cfg.epsilon_max):
            if out.success:
                report.rejected_chains += 1
            return False
        label = out.original.label
        D_ag.extend(LabeledText(t, label) for t in out.intermediates)
        report.chains.append(ChainRecord(out.original.text, label, len(out.original.text),
                                         out.modification_rate, len(out.intermediates)))
        return len(D_ag) > limit

    pool = ThreadPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        step = max(1, jobs)
        for start in range(0, len(order), step):
            window = order[start:start + step]
            if pool is None:
                outs = [attack(window[0], f, graph, acfg)]
            else:
                outs = list(pool.map(lambda x: attack(x, f, graph, acfg), window))
            if any(commit(o) for o in outs):
                report.stopped_early = True
                break
    except (ConnectionError, OSError) as exc:
        _finish(report, D_ag)
        raise AugmentAborted(exc, report, D_ag) from exc
    finally:
        if pool is not None:
            pool.shutdown()
    _finish(report, D_ag)
    return D_ag + D, report


def _finish(report: AugmentReport, D_ag: list) -> None:
    report.generated = len(D_ag)
    report.n_chains = len(report.chains)
    if report.chains:
        report.avg_source_length = float(np.mean([c.length for c in report.chains]))


def conventional_augment(D: Sequence[LabeledText], f: ClassifierHandle, graph: AdvGraph,
                         attack_cfg: AttackConfig, jobs: int = 1) -> tuple[list[LabeledText], AugmentReport]:
    """Baseline adversarial training set: attack every source, keep final adversarial texts only."""
    D = list(D)
    if not D:
        raise ValueError("source dataset is empty")
    outs = run_attacks(D, f, graph, attack_cfg, jobs=jobs)
    report = AugmentReport(epsilon_max=attack_cfg.max_mr or 1.0, source_size=len(D), sources_consumed=len(D))
    extra = []
    for o in outs:
        report.total_queries += o.queries
        if o.skipped:
            report.skipped_misclassified += 1
        elif o.success:
            extra.append(LabeledText(o.final_text, o.original.label))
            report.chains.append(ChainRecord(o.original.text, o.original.label, len(o.original.text),
                                             o.modification_rate, 1))
    _finish(report, extra)
    return extra + D, report


def check_report(report: AugmentReport, tol: float = 1e-9) -> None:
    """Assert the per-chain budget and epsilon soundness."""
    if report.chain_budget() + tol < report.generated:
        raise AssertionError(f"chain budget {report.chain_budget():.4f} below generated {report.generated}")
    bad = [c for c in report.chains if not c.final_mr < report.epsilon_max]
    if bad:
        raise AssertionError(f"{len(bad)} accepted chains reach epsilon_max")


def save_augmented(D_ag: Sequence[LabeledText], report: AugmentReport, path) -> str:
    """Write the dataset as JSON lines and the report next to it; returns the report path."""
    save_jsonl(D_ag, path)
    side = str(path) + ".report.json"
    report.save(side)
    return side
