"""Score-accumulation kernels for first-phase retrieval.

The hot loop gathers postings for every query term and accumulates
weighted contributions into a dense score vector.  Two implementations
ship: a numba-jitted loop and a pure-numpy fallback.  Selection order:

* ``CONVSEARCH_NUMBA=0`` in the environment forces the numpy path;
* otherwise numba is used when importable, numpy if not.

``benchmarks/bench_bm25.py`` times one against the other.
"""

from __future__ import annotations

import os

import numpy as np


def bm25_accumulate_numpy(
    doc_nums: np.ndarray,
    tfs: np.ndarray,
    offsets: np.ndarray,
    coefs: np.ndarray,
    k1: float,
    denom: np.ndarray,
    scores: np.ndarray,
) -> None:
    """Vectorized fallback: one fancy-indexed update per query term.

    ``offsets`` delimits each term's slice of the concatenated postings;
    ``coefs[t]`` carries idf times query multiplicity.  A term's postings
    hold distinct documents, so ``+=`` through fancy indexing is safe.
    """
    for t in range(len(coefs)):
        lo, hi = offsets[t], offsets[t + 1]
        idx = doc_nums[lo:hi]
        f = tfs[lo:hi]
        scores[idx] += coefs[t] * f * (k1 + 1.0) / (f + denom[idx])


def _make_numba_kernel():
    import numba

    @numba.njit(cache=True)
    def bm25_accumulate_numba(doc_nums, tfs, offsets, coefs, k1, denom, scores):
        for t in range(coefs.size):
            c = coefs[t]
            for j in range(offsets[t], offsets[t + 1]):
                d = doc_nums[j]
                f = tfs[j]
                scores[d] += c * f * (k1 + 1.0) / (f + denom[d])

    return bm25_accumulate_numba


def _select_backend():
    if os.environ.get("CONVSEARCH_NUMBA", "1").lower() in ("0", "false", "no"):
        return "numpy", bm25_accumulate_numpy
    try:
        return "numba", _make_numba_kernel()
    except ImportError:  # pragma: no cover - numba is a declared dependency
        return "numpy", bm25_accumulate_numpy


BACKEND, bm25_accumulate = _select_backend()


def get_kernel(name: str):
    """Fetch a specific backend by name (used by the benchmark and tests)."""
    if name == "numpy":
        return bm25_accumulate_numpy
    if name == "numba":
        return _make_numba_kernel()
    raise ValueError(f"unknown kernel backend {name!r}")
