import math
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from gampclass import Dataset, read_dataset, read_libsvm, write_dataset, write_libsvm
from gampclass.data import (
    ParseError,
    SyntheticTruth,
    class_conditional_test,
    class_mean_scale,
    flip_labels,
    gen_class_conditional,
    gen_probit_data,
    gen_sparse_weights,
)

CORPUS = Path(__file__).parent / "data" / "sparse_corpus.svm"


def test_dataset_invariants():
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 3)), np.array([1.0, 0.5]))
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 3)), np.array([1.0]))
    with pytest.raises(ValueError):
        Dataset(np.array([[np.nan]]), np.array([1.0]))


def test_bundled_corpus_shape_and_density():
    data = read_libsvm(CORPUS, n_features=5000)
    assert data.X.shape == (1000, 5000)
    assert data.is_sparse
    assert data.X.nnz / (1000 * 5000) == pytest.approx(0.002)
    assert set(np.unique(data.y)) == {-1.0, 1.0}


def test_bundled_corpus_roundtrip(tmp_path):
    data = read_libsvm(CORPUS, n_features=5000)
    out = tmp_path / "copy.svm"
    write_libsvm(out, data)
    again = read_libsvm(out, n_features=5000)
    assert (again.X != data.X).nnz == 0
    assert np.array_equal(again.y, data.y)
    assert out.read_text() == CORPUS.read_text()


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(1, 30), st.floats(0.0, 1.0), st.integers(0, 2**32 - 1))
def test_libsvm_roundtrip_property(m, n, dens, seed):
    import tempfile
    rng = np.random.default_rng(seed)
    X = sp.random(m, n, density=dens, random_state=rng, data_rvs=rng.standard_normal).tocsr()
    y = rng.choice([-1.0, 1.0], m)
    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "x.svm"
        write_libsvm(p, Dataset(X, y))
        back = read_libsvm(p, n_features=n)
    got = back.X.toarray() if back.is_sparse else back.X
    assert np.array_equal(got, X.toarray())
    assert np.array_equal(back.y, y)


def test_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    data = Dataset(rng.standard_normal((5, 3)), np.array([1, -1, 1, 1, -1.0]))
    write_dataset(tmp_path / "d.csv", data)
    back = read_dataset(tmp_path / "d.csv")
    assert np.array_equal(back.X, data.X) and np.array_equal(back.y, data.y)


def test_label_mapping_and_errors(tmp_path):
    p = tmp_path / "a.svm"
    p.write_text("0 1:1.5\n1 2:2\n-1 3:1 # comment\n\n")
    d = read_libsvm(p)
    assert np.array_equal(d.y, [-1.0, 1.0, -1.0])
    p.write_text("+1 3:1 2:1\n")
    with pytest.raises(ParseError) as info:
        read_libsvm(p)
    assert info.value.lineno == 1
    p.write_text("+1 1:1\n2 1:1\n")
    with pytest.raises(ValueError):
        read_libsvm(p)
    p.write_text("+1 1:abc\n")
    with pytest.raises(ParseError):
        read_libsvm(p)


def test_sparse_weights():
    t = gen_sparse_weights(100, 7, "pm_one", 0)
    assert np.count_nonzero(t.w_true) == 7 and set(np.abs(t.w_true[t.w_true != 0])) == {1.0}
    with pytest.raises(ValueError):
        gen_sparse_weights(5, 6)


def test_noiseless_probit_labels_are_signs():
    t = gen_sparse_weights(40, 5, "gaussian", 3)
    d = gen_probit_data(t, 200, v=0.0, rng=4)
    assert np.array_equal(d.y, np.where(d.X @ t.w_true >= 0, 1.0, -1.0))


def test_class_conditional_bayes_error():
    from scipy.stats import norm
    mu = class_mean_scale(512, 8192, 0.05)
    assert norm.cdf(-math.sqrt(512 * 8192) * mu) == pytest.approx(0.05)
    truth = gen_sparse_weights(200, 10, "pm_one", 0)
    data, truth = gen_class_conditional(200, 40, 0.05, True, 1, truth)
    assert norm.cdf(-np.linalg.norm(truth.w_true) / math.sqrt(truth.params["v"])) == pytest.approx(0.05)
    assert data.y.sum() == 0


def test_class_conditional_test_set_is_balanced():
    _, truth = gen_class_conditional(16, 64, 0.05, True, 0)
    test = class_conditional_test(truth, 100, 1)
    assert test.X.shape == (100, 16) and test.y.sum() == 0


def test_flip_labels():
    y = np.ones(10000)
    noisy, beta = flip_labels(y, 0.2, 0)
    assert np.array_equal(noisy == y, beta == 1)
    assert abs(np.mean(beta == 0) - 0.2) < 0.02
    assert np.array_equal(flip_labels(y, 0.0, 0)[0], y)


def test_truth_json_roundtrip():
    t = SyntheticTruth(np.array([0.0, 1.5]), 1, "sparse", {"v": 0.1}, np.array([1.0, 0.0]))
    back = SyntheticTruth.from_json(t.to_json())
    assert np.array_equal(back.w_true, t.w_true) and back.params == t.params
    assert np.array_equal(back.beta, t.beta)
