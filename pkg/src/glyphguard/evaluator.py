"""Accuracy, attack success rates and success-vs-budget curves."""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import replace
from typing import Sequence

import numpy as np

from .attackkit import AttackConfig, AttackOutcome, ClassifierHandle, modification_rate, run_attacks
from .chargraph import AdvGraph
from .datasets import LabeledText

DEFAULT_CAPS = (0.1, 0.2, 0.3, 0.4, 0.5)


class EmptyDenominatorError(ValueError):
    pass


def accuracy(f: ClassifierHandle, D_test: Sequence[LabeledText]) -> float:
    D_test = list(D_test)
    if not D_test:
        raise ValueError("test set is empty")
    probs = f.predict_probs([x.text for x in D_test])
    return float(np.mean(np.argmax(probs, axis=1) == np.array([x.label for x in D_test])))


def robustness_report(outcomes: Sequence[AttackOutcome], lasr_cap: float = 0.2) -> dict:
    """UASR, LASR and mean MR over outcomes the model initially got right."""
    eligible = [o for o in outcomes if not o.skipped]
    if not eligible:
        raise EmptyDenominatorError("no correctly classified texts among the outcomes")
    wins = [o for o in eligible if o.success]
    n = len(eligible)
    return {
        "uasr": len(wins) / n,
        "lasr": sum(o.modification_rate <= lasr_cap for o in wins) / n,
        "mean_mr": float(np.mean([o.modification_rate for o in wins])) if wins else None,
        "n_eligible": n,
        "n_success": len(wins),
    }


def _check_caps(caps: Sequence[float]) -> list[float]:
    caps = [float(c) for c in caps]
    if any(not 0.0 < c <= 1.0 for c in caps) or any(a >= b for a, b in zip(caps, caps[1:])):
        raise ValueError("caps must be strictly ascending in (0, 1]")
    return caps


def curve_from_outcomes(outcomes: Sequence[AttackOutcome], caps: Sequence[float] = DEFAULT_CAPS) -> list[tuple[float, float]]:
    """Prefix evaluation of unlimited chains.

    Every commit raises the modification rate, so a run capped at ``c`` makes
    exactly the commits of the unlimited run whose MR stays within ``c``.
    It succeeds iff the unlimited run's flip happened within the cap.
    """
    caps = _check_caps(caps)
    eligible = [o for o in outcomes if not o.skipped]
    if not eligible:
        raise EmptyDenominatorError("no correctly classified texts among the outcomes")
    mrs = np.array([o.modification_rate for o in eligible if o.success])
    return [(c, float(np.sum(mrs <= c)) / len(eligible)) for c in caps]


def asr_curve(texts: Sequence[LabeledText], f: ClassifierHandle, graph: AdvGraph, attack_cfg: AttackConfig,
              caps: Sequence[float] = DEFAULT_CAPS, jobs: int = 1) -> list[tuple[float, float]]:
    outcomes = run_attacks(texts, f, graph, replace(attack_cfg, max_mr=None), jobs=jobs)
    return curve_from_outcomes(outcomes, caps)


def prefix_success(outcome: AttackOutcome, cap: float) -> bool:
    """Whether the stored chain flips within ``cap``, judged from its intermediates."""
    if not outcome.success:
        return False
    for t in outcome.intermediates:
        if modification_rate(outcome.original.text, t) > cap:
            return False
    return True


def sample_eval_set(D_test: Sequence[LabeledText], n: int = 1000, seed: int = 0) -> list[LabeledText]:
    D_test = list(D_test)
    if n <= 0:
        warnings.warn("sample size is zero; returning an empty set", stacklevel=2)
        return []
    if n > len(D_test):
        warnings.warn(f"requested {n} texts from a set of {len(D_test)}; using all of them", stacklevel=2)
        n = len(D_test)
    rng = np.random.default_rng(np.random.SeedSequence(seed & (2**64 - 1)))
    return [D_test[i] for i in rng.choice(len(D_test), size=n, replace=False)]


def save_report(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
        fh.write("\n")


def save_curve(curve: Sequence[tuple[float, float]], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cap", "asr"])
        for cap, asr in curve:
            w.writerow([f"{cap:g}", f"{asr:.6f}"])
