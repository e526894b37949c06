"""Input checks shared by the estimators and attack entry points."""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .datasets import normalize_text


class EmptyTextError(ValueError):
    pass


class LabelRangeError(ValueError):
    pass


def check_text(text) -> str:
    if not isinstance(text, str):
        raise TypeError(f"expected str, got {type(text).__name__}")
    text = normalize_text(text)
    if not text:
        raise EmptyTextError("text is empty")
    return text


def check_texts(X: Iterable) -> list[str]:
    if isinstance(X, str):
        raise TypeError("expected a sequence of texts, got a single string")
    return [check_text(x) for x in X]


def check_labels(y: Sequence, n_classes: int | None = None) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError("labels must be one-dimensional")
    if y.size and not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise LabelRangeError("labels must be integers")
        y = y.astype(np.int64)
    if n_classes is not None and y.size and (y.min() < 0 or y.max() >= n_classes):
        raise LabelRangeError(f"labels must lie in [0, {n_classes}), got range [{y.min()}, {y.max()}]")
    return y.astype(np.int64)


def check_probabilities(probs: np.ndarray, n_texts: int, tol: float) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] != n_texts:
        raise ValueError(f"expected {n_texts} probability rows, got shape {probs.shape}")
    if n_texts and (np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > tol)):
        raise ValueError("probability rows must be nonnegative and sum to 1")
    return probs
