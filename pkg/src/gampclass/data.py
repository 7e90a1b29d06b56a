"""Datasets, file formats and synthetic generators."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp
from scipy.stats import norm

DENSE_THRESHOLD = 0.25


class ParseError(ValueError):
    """Malformed line in a data file; carries the 1-based line number."""

    def __init__(self, lineno, msg):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass(frozen=True)
class Dataset:
    """Feature matrix ``X`` (M x N, dense or CSR) with labels in {-1, +1}."""

    X: Union[np.ndarray, sp.csr_matrix]
    y: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        object.__setattr__(self, "y", y)
        if y.ndim != 1:
            raise ValueError("labels must be a vector")
        if self.X.shape[0] != y.shape[0]:
            raise ValueError(f"X has {self.X.shape[0]} rows but y has {y.shape[0]} labels")
        if y.size and not np.all(np.abs(y) == 1.0):
            raise ValueError("labels must be exactly -1 or +1")
        data = self.X.data if sp.issparse(self.X) else self.X
        if not np.all(np.isfinite(data)):
            raise ValueError("X contains NaN or Inf")

    @property
    def shape(self):
        return self.X.shape

    @property
    def is_sparse(self):
        return sp.issparse(self.X)

    def subset(self, rows) -> "Dataset":
        return Dataset(self.X[rows], self.y[rows])


@dataclass
class SyntheticTruth:
    """Ground truth recorded alongside a synthetic dataset."""

    w_true: np.ndarray
    K: int
    model: str
    params: dict = field(default_factory=dict)
    beta: Optional[np.ndarray] = None

    def to_json(self) -> str:
        out = {"w_true": self.w_true.tolist(), "K": int(self.K), "model": self.model,
               "params": self.params}
        if self.beta is not None:
            out["beta"] = self.beta.astype(int).tolist()
        return json.dumps(out, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "SyntheticTruth":
        d = json.loads(text)
        beta = None if d.get("beta") is None else np.asarray(d["beta"], dtype=float)
        return cls(np.asarray(d["w_true"], dtype=float), int(d["K"]), d["model"], d["params"], beta)


def as_storage(X):
    """CSR for sparse-enough matrices, dense ndarray otherwise."""
    if sp.issparse(X):
        X = X.tocsr()
        size = X.shape[0] * X.shape[1]
        if size and X.nnz / size > DENSE_THRESHOLD:
            return X.toarray()
        return X
    return np.asarray(X, dtype=float)


# ---------------------------------------------------------------------------
# file formats


def _map_label(tok, lineno):
    try:
        val = float(tok)
    except ValueError:
        raise ParseError(lineno, f"bad label {tok!r}") from None
    if val in (1.0,):
        return 1.0
    if val in (-1.0, 0.0):
        return -1.0
    raise ValueError(f"line {lineno}: label {tok!r} is not one of -1, +1, 0, 1")


def read_libsvm(path, n_features: Optional[int] = None) -> Dataset:
    """Read ``<label> <idx>:<val> ...`` lines (1-based ascending indices).

    Labels 0 and -1 both map to -1.  ``n_features`` overrides the inferred
    feature count (the largest index seen).
    """
    rows, cols, vals, labels = [], [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            toks = line.split()
            labels.append(_map_label(toks[0], lineno))
            last = 0
            for tok in toks[1:]:
                idx, sep, val = tok.partition(":")
                if not sep:
                    raise ParseError(lineno, f"expected idx:val, got {tok!r}")
                try:
                    j = int(idx)
                    x = float(val)
                except ValueError:
                    raise ParseError(lineno, f"bad entry {tok!r}") from None
                if j <= last:
                    raise ParseError(lineno, "feature indices must be 1-based and ascending")
                last = j
                rows.append(len(labels) - 1)
                cols.append(j - 1)
                vals.append(x)
    m = len(labels)
    n = max(cols) + 1 if cols else 0
    if n_features is not None:
        if n_features < n:
            raise ValueError(f"file uses {n} features, more than n_features={n_features}")
        n = n_features
    X = sp.csr_matrix((np.asarray(vals, dtype=np.float64), (rows, cols)), shape=(m, n))
    return Dataset(as_storage(X), np.asarray(labels))


def _fmt(x):
    return repr(float(x))


def write_libsvm(path, data: Dataset):
    X = sp.csr_matrix(data.X)
    with open(path, "w") as fh:
        for i in range(X.shape[0]):
            lo, hi = X.indptr[i], X.indptr[i + 1]
            idx = X.indices[lo:hi]
            val = X.data[lo:hi]
            order = np.argsort(idx)
            items = " ".join(f"{j + 1}:{_fmt(v)}" for j, v in zip(idx[order], val[order]) if v != 0)
            lab = "+1" if data.y[i] > 0 else "-1"
            fh.write(f"{lab} {items}".rstrip() + "\n")


def read_csv(path) -> Dataset:
    """Dense CSV: first column is the label, remaining columns the features."""
    labels, rows = [], []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or rec[0].startswith("#"):
                continue
            labels.append(_map_label(rec[0], lineno))
            try:
                rows.append([float(x) for x in rec[1:]])
            except ValueError:
                raise ParseError(lineno, "non-numeric feature") from None
            if len(rows[-1]) != len(rows[0]):
                raise ParseError(lineno, "ragged row")
    X = np.asarray(rows, dtype=np.float64).reshape(len(rows), -1 if rows else 0)
    return Dataset(X, np.asarray(labels))


def write_csv(path, data: Dataset):
    X = data.X.toarray() if sp.issparse(data.X) else data.X
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for lab, row in zip(data.y, X):
            w.writerow([int(lab)] + [_fmt(v) for v in row])


def read_dataset(path, n_features=None) -> Dataset:
    if str(path).endswith(".csv"):
        return read_csv(path)
    return read_libsvm(path, n_features)


def write_dataset(path, data: Dataset):
    if str(path).endswith(".csv"):
        write_csv(path, data)
    else:
        write_libsvm(path, data)


# ---------------------------------------------------------------------------
# generators


def _rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def gen_sparse_weights(N, K, amplitude="pm_one", rng=None) -> SyntheticTruth:
    """K-sparse weights with uniformly random support."""
    if not 0 < K <= N:
        raise ValueError(f"need 0 < K <= N, got K={K}, N={N}")
    rng = _rng(rng)
    w = np.zeros(N)
    support = rng.choice(N, size=K, replace=False)
    if amplitude == "pm_one":
        w[support] = rng.choice([-1.0, 1.0], size=K)
    elif amplitude == "gaussian":
        w[support] = rng.standard_normal(K)
    else:
        raise ValueError(f"unknown amplitude {amplitude!r}")
    return SyntheticTruth(w, K, "sparse", {"amplitude": amplitude})


def gen_probit_data(truth: SyntheticTruth, M, feature_var=1.0, v=0.0, rng=None) -> Dataset:
    """Gaussian features and labels ``sgn(x'w - e)`` with e ~ N(0, v)."""
    if not feature_var > 0 or v < 0:
        raise ValueError("need feature_var > 0 and v >= 0")
    rng = _rng(rng)
    N = truth.w_true.size
    X = rng.standard_normal((M, N)) * math.sqrt(feature_var)
    z = X @ truth.w_true
    e = rng.standard_normal(M) * math.sqrt(v) if v > 0 else np.zeros(M)
    y = np.where(z - e >= 0, 1.0, -1.0)
    truth.model = "probit-score"
    truth.params.update({"v": v, "feature_var": feature_var})
    return Dataset(X, y)


def class_mean_scale(N, M, eps_bayes):
    """Class-mean offset mu with Phi(-sqrt(N M) mu) = eps_bayes."""
    if not 0 < eps_bayes < 0.5:
        raise ValueError("Bayes error must lie in (0, 1/2)")
    return float(norm.isf(eps_bayes) / math.sqrt(N * M))


def _balanced_labels(M, balanced, rng):
    if balanced:
        y = -np.ones(M)
        y[: (M + 1) // 2] = 1.0
        return rng.permutation(y)
    return np.where(rng.random(M) < 0.5, 1.0, -1.0)


def gen_class_conditional(N, M, eps_bayes, balanced=True, rng=None, truth=None):
    """Class-conditional Gaussian features with a target Bayes error.

    Without ``truth`` every feature is discriminative: x | y ~ N(y mu 1, I/M)
    with mu solved from the Bayes error.  With a (sparse) ``truth`` the
    features are x | y ~ N(y w, v I) and the noise variance v is solved so
    that Phi(-||w|| / sqrt(v)) hits the target instead.
    """
    rng = _rng(rng)
    y = _balanced_labels(M, balanced, rng)
    if truth is None:
        mu = class_mean_scale(N, M, eps_bayes)
        X = y[:, None] * mu + rng.standard_normal((M, N)) / math.sqrt(M)
        truth = SyntheticTruth(np.ones(N), N, "class-conditional",
                               {"mu": mu, "feature_var": 1.0 / M, "eps_bayes": eps_bayes})
        return Dataset(X, y), truth
    if not 0 < eps_bayes < 0.5:
        raise ValueError("Bayes error must lie in (0, 1/2)")
    w = truth.w_true
    v = float(np.dot(w, w) / norm.isf(eps_bayes) ** 2)
    X = y[:, None] * w[None, :] + rng.standard_normal((M, w.size)) * math.sqrt(v)
    truth.model = "class-conditional"
    truth.params.update({"v": v, "eps_bayes": eps_bayes})
    return Dataset(X, y), truth


def class_conditional_test(truth: SyntheticTruth, T, rng=None) -> Dataset:
    """Fresh balanced examples from a class-conditional truth (no label noise)."""
    rng = _rng(rng)
    y = _balanced_labels(T, True, rng)
    w = truth.w_true
    if "mu" in truth.params:
        X = y[:, None] * truth.params["mu"] * w[None, :] + \
            rng.standard_normal((T, w.size)) * math.sqrt(truth.params["feature_var"])
    else:
        X = y[:, None] * w[None, :] + rng.standard_normal((T, w.size)) * math.sqrt(truth.params["v"])
    return Dataset(X, y)


def flip_labels(y, gamma, rng=None):
    """Negate each label with probability gamma; beta = 0 marks a flipped label."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    rng = _rng(rng)
    y = np.asarray(y, dtype=float)
    flipped = rng.random(y.shape) < gamma
    return np.where(flipped, -y, y), (~flipped).astype(float)
