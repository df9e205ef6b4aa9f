"""Kernel dispatch: the compiled extension if importable, numpy otherwise.

Set ``OSIBENCH_PURE=1`` to force the numpy fallback. Both backends produce
bit-identical results.
"""
import os

import numpy as np

from osibench import _pykernels

try:
    if os.environ.get("OSIBENCH_PURE"):
        raise ImportError("pure backend requested")
    from osibench import _kernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "numpy"


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def dot_block(tests, refs):
    """Dot products of every test row with every reference row, shape (n, w)."""
    return _impl.dot_block(_c(tests), _c(refs))


def row_max_argmax(scores):
    """Row maximum and the first column attaining it."""
    return _impl.row_max_argmax(_c(scores))


def score_max(tests, refs):
    """Fused ``row_max_argmax(dot_block(tests, refs))``."""
    return _impl.score_max(_c(tests), _c(refs))


def topk_mean_std(scores, k):
    """Mean and population standard deviation of the k largest entries per row."""
    return _impl.topk_mean_std(_c(scores), int(k))


def row_mean(scores):
    return _impl.row_mean(_c(scores))


def sweep_counts(targets, nontargets):
    """For each distinct score value v: (#targets <= v, #nontargets > v).

    Both inputs must be sorted ascending.
    """
    return _impl.sweep_counts(_c(targets), _c(nontargets))


__all__ = [
    "BACKEND",
    "dot_block",
    "row_max_argmax",
    "score_max",
    "topk_mean_std",
    "row_mean",
    "sweep_counts",
]
