import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from osibench import _pykernels, kernels
from oracles import py_dot

from conftest import BACKENDS, _kernels


def test_dispatch_reports_backend():
    assert kernels.BACKEND in ("cython", "numpy")
    if os.environ.get("OSIBENCH_PURE"):
        assert kernels.BACKEND == "numpy"
    elif _kernels is not None:
        assert kernels.BACKEND == "cython"


def test_dot_block_matches_python_loop(backend):
    rng = np.random.default_rng(0)
    a = rng.standard_normal((7, 33))
    b = rng.standard_normal((5, 33))
    out = backend.dot_block(a, b)
    for i in range(7):
        for j in range(5):
            assert out[i, j] == py_dot(a[i].tolist(), b[j].tolist())


def test_score_max_first_index_on_ties(backend):
    tests = np.array([[1.0, 0.0]])
    refs = np.array([[0.5, 1.0], [0.5, -1.0], [0.2, 0.0]])
    best, arg = backend.score_max(tests, refs)
    assert best[0] == 0.5 and arg[0] == 0
    best, arg = backend.row_max_argmax(np.array([[0.1, 0.4, 0.4], [-1.0, -2.0, -1.0]]))
    assert arg.tolist() == [1, 0]
    assert best.tolist() == [0.4, -1.0]


def test_topk_example(backend):
    mean, std = backend.topk_mean_std(np.array([[0.5, 0.3, 0.1]]), 2)
    assert mean[0] == pytest.approx(0.4, abs=1e-15)
    assert std[0] == pytest.approx(0.1, abs=1e-15)


def test_topk_errors(backend):
    with pytest.raises(ValueError):
        backend.topk_mean_std(np.zeros((1, 3)), 4)
    with pytest.raises(ValueError):
        backend.topk_mean_std(np.zeros((1, 3)), 0)


def test_sweep_counts_small(backend):
    thr, tle, ngt = backend.sweep_counts(np.array([0.7, 0.8, 0.9]), np.array([0.1, 0.2, 0.75]))
    assert thr.tolist() == [0.1, 0.2, 0.7, 0.75, 0.8, 0.9]
    assert tle.tolist() == [0, 0, 1, 1, 2, 3]
    assert ngt.tolist() == [2, 1, 1, 0, 0, 0]


def test_sweep_counts_ties_across_classes(backend):
    thr, tle, ngt = backend.sweep_counts(np.array([0.5, 0.5]), np.array([0.5]))
    assert thr.tolist() == [0.5]
    assert tle.tolist() == [2]
    assert ngt.tolist() == [0]


@pytest.mark.skipif(_kernels is None, reason="compiled kernels not built")
@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 9)),
           elements=st.floats(-1, 1, allow_nan=False)),
    arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 9)),
           elements=st.floats(-1, 1, allow_nan=False)),
)
def test_backends_bit_identical(a, b):
    d = min(a.shape[1], b.shape[1])
    a = np.ascontiguousarray(a[:, :d])
    b = np.ascontiguousarray(b[:, :d])
    for fn in ("dot_block", "score_max"):
        x = getattr(_kernels, fn)(a, b)
        y = getattr(_pykernels, fn)(a, b)
        for u, v in zip(np.atleast_1d(x) if fn == "dot_block" else x, np.atleast_1d(y) if fn == "dot_block" else y):
            assert np.array_equal(u, v)
    k = 1 + a.shape[1] // 2
    for u, v in zip(_kernels.topk_mean_std(a, k), _pykernels.topk_mean_std(a, k)):
        assert np.array_equal(u, v)
    assert np.array_equal(_kernels.row_mean(a), _pykernels.row_mean(a))
    t, n = np.sort(a.ravel()), np.sort(b.ravel())
    for u, v in zip(_kernels.sweep_counts(t, n), _pykernels.sweep_counts(t, n)):
        assert np.array_equal(u, v)
