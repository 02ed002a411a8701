"""Time the BM25 accumulation kernel: numba @njit vs the numpy fallback.

Builds one synthetic postings layout and feeds the identical query batch
through both backends.  The numba path is also what you get by default
at import time; set CONVSEARCH_NUMBA=0 to force the numpy fallback in
the library itself.

Run:  python benchmarks/bench_bm25.py [n_docs] [n_queries]
"""

from __future__ import annotations

import random
import sys
import time

import numpy as np

from convsearch._kernels import get_kernel
from convsearch.corpus import Corpus, Document
from convsearch.index import build_index

N_DOCS = int(sys.argv[1]) if len(sys.argv) > 1 else 5000
N_QUERIES = int(sys.argv[2]) if len(sys.argv) > 2 else 300
VOCAB = [f"term{i:03d}" for i in range(400)]


def synthetic_index():
    rng = random.Random(7)
    corpus = Corpus()
    for i in range(N_DOCS):
        body = " ".join(rng.choices(VOCAB, k=rng.randint(30, 120)))
        corpus.add_document(Document(f"d{i:05d}", "", body))
    return build_index(corpus)


def query_batches(index, rng):
    batches = []
    for _ in range(N_QUERIES):
        terms = rng.sample(VOCAB, rng.randint(2, 8))
        known = [t for t in terms if t in index.postings]
        if not known:
            continue
        chunks = [index.postings[t][0] for t in known]
        tf_chunks = [index.postings[t][1] for t in known]
        offsets = np.cumsum([0] + [len(c) for c in chunks]).astype(np.int64)
        coefs = np.array([index.idf(t) for t in known])
        batches.append(
            (np.concatenate(chunks), np.concatenate(tf_chunks), offsets, coefs)
        )
    return batches


def time_backend(name, kernel, index, batches, denom):
    scores = np.zeros(index.n_docs)
    # warm-up covers numba JIT compilation
    kernel(*batches[0], index.k1, denom, scores)
    started = time.perf_counter()
    checksum = 0.0
    for doc_nums, tfs, offsets, coefs in batches:
        scores[:] = 0.0
        kernel(doc_nums, tfs, offsets, coefs, index.k1, denom, scores)
        checksum += scores.sum()
    elapsed = time.perf_counter() - started
    print(f"{name:>6s}: {elapsed * 1000:8.1f} ms "
          f"({elapsed / len(batches) * 1e6:7.1f} us/query, checksum {checksum:.3f})")
    return elapsed, checksum


def main():
    print(f"building synthetic index: {N_DOCS} docs, {len(VOCAB)} terms ...")
    index = synthetic_index()
    rng = random.Random(13)
    batches = query_batches(index, rng)
    denom = index.k1 * (1 - index.b + index.b * index.doc_lengths / index.avg_doc_length)
    print(f"timing {len(batches)} queries per backend")
    t_numpy, c_numpy = time_backend("numpy", get_kernel("numpy"), index, batches, denom)
    t_numba, c_numba = time_backend("numba", get_kernel("numba"), index, batches, denom)
    assert abs(c_numpy - c_numba) < 1e-6 * max(1.0, abs(c_numpy)), "backends disagree"
    print(f"speedup: {t_numpy / t_numba:.2f}x (numba over numpy)")


if __name__ == "__main__":
    main()
