"""Inverted index with BM25 scoring for first-phase retrieval.

Documents are numbered by ascending doc_id; postings are stored as numpy
arrays per term so the accumulation kernel can run jitted.  The idf is
the non-negative ``ln(1 + (N - n + 0.5) / (n + 0.5))`` variant, so scores
never go below zero and top-k lists are prefix-monotone in k.

On-disk layout (``save_index``), little-endian throughout:

* line 1: JSON header ``{"format", "n_docs", "n_terms", "avg_doc_length"}``
  terminated by ``\\n``
* document table, ``n_docs`` entries in doc-number order:
  ``u16`` byte length of the UTF-8 doc_id, the id bytes, ``u32`` token count
* postings, ``n_terms`` entries in sorted term order:
  ``u16`` term byte length, term bytes, ``u32`` posting count, then that
  many ``(u32 doc_num, u32 tf)`` pairs
"""

from __future__ import annotations

import json
import math
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import DataError
from ._kernels import bm25_accumulate
from .corpus import Corpus
from .text import tokenize

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75
DEFAULT_TOP_K = 100

INDEX_FORMAT = 1


@dataclass
class InvertedIndex:
    doc_ids: list[str]
    postings: dict[str, tuple[np.ndarray, np.ndarray]]
    doc_lengths: np.ndarray
    avg_doc_length: float
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B

    @property
    def n_docs(self) -> int:
        return len(self.doc_ids)

    def doc_num(self, doc_id: str) -> int:
        if not hasattr(self, "_doc_nums"):
            self._doc_nums = {d: i for i, d in enumerate(self.doc_ids)}
        try:
            return self._doc_nums[doc_id]
        except KeyError:
            raise DataError(f"document {doc_id!r} is not in the index") from None

    def idf(self, term: str) -> float:
        n_t = len(self.postings[term][0]) if term in self.postings else 0
        return math.log(1.0 + (self.n_docs - n_t + 0.5) / (n_t + 0.5))


@dataclass
class CandidateSet:
    """Top-k first-phase result for one topic, scores non-increasing."""

    topic_id: str
    ranked: list[tuple[str, float]]

    def __post_init__(self) -> None:
        scores = [s for _, s in self.ranked]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("candidate scores must be non-increasing")
        ids = [d for d, _ in self.ranked]
        if len(set(ids)) != len(ids):
            raise ValueError("candidate doc_ids must be distinct")

    @property
    def doc_ids(self) -> list[str]:
        return [d for d, _ in self.ranked]


def build_index(corpus: Corpus, k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> InvertedIndex:
    """Tokenize title + body of every document and build sorted postings."""
    if len(corpus) == 0:
        raise DataError("cannot index an empty corpus")
    doc_ids = sorted(doc.doc_id for doc in corpus)
    num_of = {d: i for i, d in enumerate(doc_ids)}
    lengths = np.zeros(len(doc_ids), dtype=np.float64)
    term_docs: dict[str, dict[int, int]] = {}
    for doc in corpus:
        tokens = tokenize(doc.text)
        num = num_of[doc.doc_id]
        lengths[num] = len(tokens)
        for term, count in Counter(tokens).items():
            term_docs.setdefault(term, {})[num] = count
    postings = {}
    for term in sorted(term_docs):
        entries = sorted(term_docs[term].items())
        nums = np.array([n for n, _ in entries], dtype=np.int64)
        tfs = np.array([c for _, c in entries], dtype=np.float64)
        postings[term] = (nums, tfs)
    return InvertedIndex(
        doc_ids=doc_ids,
        postings=postings,
        doc_lengths=lengths,
        avg_doc_length=float(lengths.mean()),
        k1=k1,
        b=b,
    )


def bm25_score(index: InvertedIndex, query_terms: list[str], doc_id: str) -> float:
    """Score one document; every occurrence of a query term contributes."""
    num = index.doc_num(doc_id)
    norm = index.k1 * (
        1.0 - index.b + index.b * index.doc_lengths[num] / index.avg_doc_length
    )
    score = 0.0
    for term in query_terms:
        if term not in index.postings:
            continue
        nums, tfs = index.postings[term]
        pos = np.searchsorted(nums, num)
        if pos >= len(nums) or nums[pos] != num:
            continue
        tf = tfs[pos]
        score += index.idf(term) * tf * (index.k1 + 1.0) / (tf + norm)
    return score


def score_all(index: InvertedIndex, query_terms: list[str]) -> np.ndarray:
    """Dense BM25 scores for every document via the accumulation kernel."""
    scores = np.zeros(index.n_docs, dtype=np.float64)
    known = [(t, m) for t, m in sorted(Counter(query_terms).items()) if t in index.postings]
    if not known:
        return scores
    denom = index.k1 * (
        1.0 - index.b + index.b * index.doc_lengths / index.avg_doc_length
    )
    doc_chunks = []
    tf_chunks = []
    offsets = [0]
    coefs = []
    for term, mult in known:
        nums, tfs = index.postings[term]
        doc_chunks.append(nums)
        tf_chunks.append(tfs)
        offsets.append(offsets[-1] + len(nums))
        coefs.append(index.idf(term) * mult)
    bm25_accumulate(
        np.concatenate(doc_chunks),
        np.concatenate(tf_chunks),
        np.array(offsets, dtype=np.int64),
        np.array(coefs, dtype=np.float64),
        index.k1,
        denom,
        scores,
    )
    return scores


def retrieve(
    index: InvertedIndex,
    topic: str,
    inferred_query: str,
    k: int = DEFAULT_TOP_K,
    topic_id: str = "",
) -> CandidateSet:
    """Rank all documents for topic text + inferred query, keep the top k.

    Duplicate terms across the two inputs are retained on purpose: a term
    present in both legitimately weighs twice.  Ties break by ascending
    doc_id.  Always returns ``min(k, n_docs)`` entries.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    query_terms = tokenize(topic) + tokenize(inferred_query)
    if not query_terms:
        raise DataError("empty query: topic and inferred query have no tokens")
    scores = score_all(index, query_terms)
    order = np.argsort(-scores, kind="stable")[:k]
    ranked = [(index.doc_ids[i], float(scores[i])) for i in order]
    return CandidateSet(topic_id=topic_id, ranked=ranked)


def save_index(index: InvertedIndex, path: str | Path) -> None:
    header = {
        "format": INDEX_FORMAT,
        "n_docs": index.n_docs,
        "n_terms": len(index.postings),
        "avg_doc_length": index.avg_doc_length,
        "k1": index.k1,
        "b": index.b,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for num, doc_id in enumerate(index.doc_ids):
            raw = doc_id.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", int(index.doc_lengths[num])))
        for term in sorted(index.postings):
            nums, tfs = index.postings[term]
            raw = term.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", len(nums)))
            for n, f in zip(nums, tfs):
                fh.write(struct.pack("<II", int(n), int(f)))


def load_index(path: str | Path) -> InvertedIndex:
    with open(path, "rb") as fh:
        blob = fh.read()
    newline = blob.find(b"\n")
    if newline < 0:
        raise DataError(f"{path}: missing index header")
    try:
        header = json.loads(blob[:newline])
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: bad index header: {exc.msg}") from None
    if header.get("format") != INDEX_FORMAT:
        raise DataError(f"{path}: unsupported index format {header.get('format')}")

    view = memoryview(blob)
    pos = newline + 1

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(blob):
            raise DataError(f"{path}: truncated index at byte {pos}")
        values = struct.unpack_from(fmt, view, pos)
        pos += size
        return values

    def take_bytes(size: int) -> bytes:
        nonlocal pos
        if pos + size > len(blob):
            raise DataError(f"{path}: truncated index at byte {pos}")
        raw = bytes(view[pos : pos + size])
        pos += size
        return raw

    doc_ids = []
    lengths = np.zeros(header["n_docs"], dtype=np.float64)
    for num in range(header["n_docs"]):
        (id_len,) = take("<H")
        doc_ids.append(take_bytes(id_len).decode("utf-8"))
        (lengths[num],) = take("<I")
    postings = {}
    for _ in range(header["n_terms"]):
        (term_len,) = take("<H")
        term = take_bytes(term_len).decode("utf-8")
        (count,) = take("<I")
        nums = np.zeros(count, dtype=np.int64)
        tfs = np.zeros(count, dtype=np.float64)
        for j in range(count):
            nums[j], tfs[j] = take("<II")
        postings[term] = (nums, tfs)
    if pos != len(blob):
        raise DataError(f"{path}: {len(blob) - pos} trailing bytes after postings")
    return InvertedIndex(
        doc_ids=doc_ids,
        postings=postings,
        doc_lengths=lengths,
        avg_doc_length=float(header["avg_doc_length"]),
        k1=float(header.get("k1", DEFAULT_K1)),
        b=float(header.get("b", DEFAULT_B)),
    )
