"""Evaluation metrics for linear classifiers and selected supports."""
from __future__ import annotations

import math
from itertools import permutations
from typing import Iterable, Sequence

import numpy as np
from scipy.special import ndtr


def closed_form_error(w_true, w_hat, v) -> float:
    """Expected misclassification rate Phi(-w'w_hat / sqrt(v ||w_hat||^2)).

    Exact when test features follow x | y ~ N(y w_true, v I).
    """
    w_true = np.asarray(w_true, dtype=float)
    w_hat = np.asarray(w_hat, dtype=float)
    if not v > 0:
        raise ValueError("v must be positive")
    nrm = float(np.linalg.norm(w_hat))
    if nrm == 0.0:
        raise ValueError("zero weight vector has no decision direction")
    return float(ndtr(-float(w_true @ w_hat) / (math.sqrt(v) * nrm)))


def error_rate(y_true, y_pred) -> float:
    y_true = np.asarray(y_true)
    return float(np.mean(y_true != np.asarray(y_pred))) if y_true.size else 0.0


def density(w, atol=0.0) -> float:
    """Fraction of nonzero weights."""
    w = np.asarray(w)
    return float(np.mean(np.abs(w) > atol)) if w.size else 0.0


def estimated_support(nonzero_prob, threshold=0.5) -> set:
    """Indices (0-based) whose posterior support probability strictly exceeds ``threshold``."""
    p = np.asarray(nonzero_prob, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    return set(np.flatnonzero(p > threshold).tolist())


def jaccard_consistency(supports: Sequence[Iterable[int]]) -> float:
    """Mean Jaccard index over ordered pairs of distinct supports."""
    sets = [set(s) for s in supports]
    if len(sets) < 2:
        raise ValueError("need at least two supports")
    total = 0.0
    count = 0
    for a, b in permutations(sets, 2):
        union = a | b
        total += 1.0 if not union else len(a & b) / len(union)
        count += 1
    return total / count


def max_identifiable_K(N: int, M: int) -> int:
    """Largest K such that M >= K' log2(N/K') holds for every K' <= K.

    K log2(N/K) falls back to zero at K = N, so the inequality alone would
    always admit K = N; the bound is meant for the initial run of valid K.
    """
    if N < 1 or M < 1:
        raise ValueError("N and M must be positive")
    K = np.arange(1, N + 1, dtype=float)
    bad = np.flatnonzero(M < K * np.log2(N / K))
    return int(bad[0]) if bad.size else int(N)
