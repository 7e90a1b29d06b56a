"""K-fold grid search over estimator hyperparameters."""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np
from sklearn.base import clone
from sklearn.model_selection import StratifiedKFold

from .metrics import error_rate, jaccard_consistency
from .parallel import pmap

logger = logging.getLogger(__name__)


def log_grid(lo, hi, size=10):
    """Logarithmically spaced grid with ``size`` points from lo to hi."""
    if not 0 < lo <= hi:
        raise ValueError("log grid needs 0 < lo <= hi")
    if size < 1:
        raise ValueError("grid size must be at least 1")
    return np.geomspace(lo, hi, size).tolist()


def radius_grid(center, radius, upper):
    """Integers within ``radius`` of ``center`` clipped to [1, upper]."""
    return list(range(max(1, center - radius), min(upper, center + radius) + 1))


@dataclass
class XvalResult:
    best_params: Dict[str, object]
    best_index: tuple
    mean_error: np.ndarray
    mean_selected: np.ndarray
    n_classifiers: int
    jaccard: float = float("nan")
    notes: List[str] = field(default_factory=list)


def _support(est):
    prob = getattr(est, "support_prob_", None)
    if prob is not None:
        return set(np.flatnonzero(prob > 0.5).tolist())
    return set(np.flatnonzero(est.coef_).tolist())


def _fit_score(task):
    base, params, X, y, train, test = task
    est = clone(base).set_params(**params)
    try:
        est.fit(X[train], y[train])
        err = error_rate(y[test], est.predict(X[test]))
        if not np.isfinite(err):
            raise FloatingPointError("non-finite score")
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        return 1.0, np.nan, set(), f"{params}: {exc}"
    support = _support(est)
    return err, float(len(support)), support, None


def grid_search(estimator, X, y, grid: Dict[str, Sequence], folds=2, seed=0, workers=None):
    """Pick the grid point with the lowest mean held-out error.

    Ties go to the sparser model (fewer selected features), then to the
    lexicographically smallest grid index.  A fold that raises a numeric
    error scores 1.0 and is noted.
    """
    if folds < 2:
        raise ValueError("cross-validation needs at least 2 folds")
    names = list(grid)
    values = [list(grid[n]) for n in names]
    if any(len(v) == 0 for v in values):
        raise ValueError("every grid must have at least one value")
    y = np.asarray(y)
    splits = list(StratifiedKFold(folds, shuffle=True, random_state=seed).split(np.zeros(len(y)), y))
    shape = tuple(len(v) for v in values)
    points = list(itertools.product(*[range(s) for s in shape]))
    tasks = []
    for idx in points:
        params = {n: values[i][j] for i, (n, j) in enumerate(zip(names, idx))}
        tasks.extend((estimator, params, X, y, tr, te) for tr, te in splits)
    outcomes = pmap(_fit_score, tasks, workers)

    err = np.zeros(shape)
    sel = np.zeros(shape)
    supports = {}
    notes = []
    for p, idx in enumerate(points):
        chunk = outcomes[p * folds:(p + 1) * folds]
        err[idx] = np.mean([c[0] for c in chunk])
        sel[idx] = np.nanmean([c[1] for c in chunk]) if any(np.isfinite(c[1]) for c in chunk) else np.inf
        supports[idx] = [c[2] for c in chunk]
        notes.extend(c[3] for c in chunk if c[3])
    best = min(points, key=lambda i: (err[i], sel[i], i))
    best_params = {n: values[k][best[k]] for k, n in enumerate(names)}
    res = XvalResult(best_params, best, err, sel, len(tasks), notes=notes)
    res.jaccard = jaccard_consistency(supports[best])
    for n in notes:
        logger.warning("cross-validation fold failed: %s", n)
    return res
