"""Trie-constrained decoding over keyword document identifiers.

The trie holds the token sequences of every candidate document's
identifier.  Generation alternates full identifier paths with a separator
token and stops with an end token; the allowed-token rule is:

* inside a partial identifier: exactly the tokens that extend the current
  segment toward some candidate's path;
* at a completed identifier: the end token, plus the separator when at
  least one candidate is still unemitted, plus any continuation tokens;
* at a segment start (sequence start or right after a separator): the
  first tokens of candidates, skipping tokens that could only lead to
  documents already emitted.

A decoded sequence never fails to parse; duplicate identifier emissions
are dropped at parse time, keeping the first occurrence.  Fallback
completion appends every unemitted candidate in first-phase order, so a
ranked list always covers the entire candidate set.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from . import DataError
from .corpus import END_ID, SEP_ID, CorpusManifest
from .index import CandidateSet


class NextTokenScorer(Protocol):
    def score_next(self, context, prefix: Sequence[int]) -> np.ndarray: ...


@dataclass
class _Node:
    children: dict[int, "_Node"] = field(default_factory=dict)
    doc_id: str | None = None
    subtree_docs: list[str] = field(default_factory=list)


@dataclass
class DecodingTrie:
    root: _Node
    doc_tokens: dict[str, tuple[int, ...]]
    candidate_order: list[str]

    @property
    def n_candidates(self) -> int:
        return len(self.candidate_order)


@dataclass
class RankedList:
    """Ordered documents with non-increasing scores; covers all candidates."""

    ranking: list[tuple[str, float]]

    @property
    def doc_ids(self) -> list[str]:
        return [d for d, _ in self.ranking]


def trie_from_sequences(
    doc_tokens: dict[str, Sequence[int]], order: Sequence[str]
) -> DecodingTrie:
    """Build a trie from raw identifier token sequences in ranked order."""
    if not order:
        raise ValueError("cannot build a decoding trie for an empty candidate set")
    root = _Node()
    frozen: dict[str, tuple[int, ...]] = {}
    for doc_id in order:
        tokens = tuple(doc_tokens[doc_id])
        if any(t in (SEP_ID, END_ID) for t in tokens):
            raise ValueError(f"identifier of {doc_id!r} uses a reserved token")
        frozen[doc_id] = tokens
        node = root
        node.subtree_docs.append(doc_id)
        for token in tokens:
            node = node.children.setdefault(token, _Node())
            node.subtree_docs.append(doc_id)
        if node.doc_id is not None:
            raise DataError(
                f"identifier collision between {node.doc_id!r} and {doc_id!r}"
            )
        node.doc_id = doc_id
    return DecodingTrie(root=root, doc_tokens=frozen, candidate_order=list(order))


def build_trie(candidates: CandidateSet, manifest: CorpusManifest) -> DecodingTrie:
    if not candidates.ranked:
        raise ValueError("cannot build a decoding trie for an empty candidate set")
    missing = [d for d in candidates.doc_ids if d not in manifest.id_map]
    if missing:
        raise DataError(f"candidate {missing[0]!r} has no keyword id in the manifest")
    doc_tokens = {d: manifest.id_map[d].tokens for d in candidates.doc_ids}
    return trie_from_sequences(doc_tokens, candidates.doc_ids)


def _walk(trie: DecodingTrie, segment: Sequence[int]) -> _Node:
    node = trie.root
    for token in segment:
        child = node.children.get(token)
        if child is None:
            raise ValueError(f"invalid prefix: segment {list(segment)} leaves the trie")
        node = child
    return node


def _split_prefix(prefix: Sequence[int]) -> tuple[list[list[int]], list[int]]:
    segments: list[list[int]] = []
    current: list[int] = []
    for token in prefix:
        if token == SEP_ID:
            segments.append(current)
            current = []
        elif token == END_ID:
            raise ValueError("invalid prefix: contains the end token")
        else:
            current.append(token)
    return segments, current


def allowed_tokens(trie: DecodingTrie, prefix: Sequence[int]) -> set[int]:
    """The exact token set that keeps ``prefix`` extendable to a valid
    generation."""
    segments, current = _split_prefix(prefix)
    emitted: set[str] = set()
    for segment in segments:
        node = _walk(trie, segment)
        if node.doc_id is None:
            raise ValueError(
                f"invalid prefix: segment {segment} is not a complete identifier"
            )
        emitted.add(node.doc_id)

    if not current:
        return {
            token
            for token, child in trie.root.children.items()
            if any(doc not in emitted for doc in child.subtree_docs)
        }

    node = _walk(trie, current)
    allowed = set(node.children)
    if node.doc_id is not None:
        allowed.add(END_ID)
        emitted_here = emitted | {node.doc_id}
        if any(doc not in emitted_here for doc in trie.candidate_order):
            allowed.add(SEP_ID)
    return allowed


def masked_step(scorer_logits: np.ndarray, allowed: set[int]) -> np.ndarray:
    """Renormalized softmax restricted to ``allowed``; zero mass elsewhere.

    Minus-infinity logits inside the allowed set get probability zero;
    NaN or +inf anywhere in the allowed set, or no finite allowed logit
    at all, is an error.
    """
    if not allowed:
        raise ValueError("allowed token set is empty")
    idx = np.fromiter(sorted(allowed), dtype=np.int64)
    values = np.asarray(scorer_logits, dtype=np.float64)[idx]
    if np.any(np.isnan(values)) or np.any(np.isposinf(values)):
        raise ValueError("allowed logits contain NaN or +inf")
    finite = np.isfinite(values)
    if not finite.any():
        raise ValueError("no finite logit among allowed tokens")
    shifted = values - values[finite].max()
    weights = np.where(finite, np.exp(shifted, where=finite, out=np.zeros_like(shifted)), 0.0)
    probs = np.zeros(len(scorer_logits), dtype=np.float64)
    probs[idx] = weights / weights.sum()
    return probs


def parse_generation(tokens: Sequence[int], trie: DecodingTrie) -> list[str]:
    """Map a generated token stream to its ordered distinct documents."""
    tokens = list(tokens)
    if END_ID in tokens:
        if tokens.index(END_ID) != len(tokens) - 1:
            raise ValueError("end token may only appear at the end of a generation")
        tokens = tokens[:-1]
    docs: list[str] = []
    segment: list[int] = []
    for token in tokens + [SEP_ID]:
        if token != SEP_ID:
            segment.append(token)
            continue
        node = _walk(trie, segment)
        if node.doc_id is None:
            raise ValueError(f"unmappable segment {segment}: not a complete identifier")
        if node.doc_id not in docs:
            docs.append(node.doc_id)
        segment = []
    return docs


@dataclass
class Beam:
    tokens: tuple[int, ...]
    log_prob: float
    emitted_ranks: tuple[int, ...]

    def sort_key(self, length_normalized: bool = False):
        steps = max(len(self.tokens), 1)
        score = self.log_prob / steps if length_normalized else self.log_prob
        return (-score, self.emitted_ranks, self.tokens)


def beam_search(
    trie: DecodingTrie,
    scorer: NextTokenScorer,
    context,
    beam_width: int = 10,
    max_docs: int = 10,
    trace_path: str | None = None,
) -> Beam | None:
    """Masked beam search; returns the best finished beam by
    length-normalized log-probability (its token sequence ends with the
    end token).  Exact ties break toward emitting higher-ranked
    first-phase candidates, then lexicographically by tokens."""
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    max_docs = min(max_docs, trie.n_candidates)
    rank_of = {doc: i for i, doc in enumerate(trie.candidate_order)}
    max_id_len = max(len(t) for t in trie.doc_tokens.values())
    step_limit = max_docs * (max_id_len + 1) + 1

    trace = open(trace_path, "w", encoding="utf-8") if trace_path else None
    active = [Beam(tokens=(), log_prob=0.0, emitted_ranks=())]
    finished: list[Beam] = []
    try:
        for step in range(step_limit):
            if not active:
                break
            expansions: list[Beam] = []
            for beam in active:
                allowed = allowed_tokens(trie, beam.tokens)
                if SEP_ID in allowed:
                    # emission budget: no separator once max_docs are closed
                    last = _walk_last_segment(trie, beam.tokens)
                    emitted = set(beam.emitted_ranks) | {rank_of[last]}
                    if len(emitted) >= max_docs:
                        allowed.discard(SEP_ID)
                try:
                    logits = scorer.score_next(context, beam.tokens)
                except Exception as exc:
                    raise RuntimeError(
                        f"scorer failed at step {step} on beam with "
                        f"{len(beam.emitted_ranks)} docs emitted, "
                        f"{len(beam.tokens)} tokens: {exc}"
                    ) from exc
                probs = masked_step(logits, allowed)
                for token in sorted(allowed):
                    p = probs[token]
                    if p <= 0.0:
                        continue
                    new_tokens = beam.tokens + (token,)
                    ranks = beam.emitted_ranks
                    if token in (SEP_ID, END_ID):
                        last = _walk_last_segment(trie, beam.tokens)
                        if last is not None and rank_of[last] not in ranks:
                            ranks = ranks + (rank_of[last],)
                    candidate = Beam(new_tokens, beam.log_prob + math.log(p), ranks)
                    if token == END_ID:
                        finished.append(candidate)
                    else:
                        expansions.append(candidate)
            expansions.sort(key=lambda b: b.sort_key())
            active = expansions[:beam_width]
            if trace:
                trace.write(
                    json.dumps(
                        {
                            "step": step,
                            "active": [
                                {"tokens": list(b.tokens), "log_prob": b.log_prob}
                                for b in active
                            ],
                            "finished": len(finished),
                        }
                    )
                    + "\n"
                )
    finally:
        if trace:
            trace.close()

    if not finished:
        return None
    return min(finished, key=lambda b: b.sort_key(length_normalized=True))


def beam_decode(
    trie: DecodingTrie,
    scorer: NextTokenScorer,
    context,
    beam_width: int = 10,
    max_docs: int = 10,
    trace_path: str | None = None,
) -> RankedList:
    """Decode a full ranking: the best finished beam's documents first,
    then every unemitted candidate in first-phase order."""
    best = beam_search(trie, scorer, context, beam_width, max_docs, trace_path)
    order = parse_generation(best.tokens, trie) if best is not None else []
    remaining = [d for d in trie.candidate_order if d not in order]
    full = order + remaining
    n = len(full)
    return RankedList(ranking=[(doc, float(n - i)) for i, doc in enumerate(full)])


def _walk_last_segment(trie: DecodingTrie, tokens: tuple[int, ...]) -> str | None:
    """Doc id of the identifier completed at the very end of ``tokens``."""
    segment: list[int] = []
    for token in reversed(tokens):
        if token == SEP_ID:
            break
        segment.append(token)
    segment.reverse()
    if not segment:
        return None
    node = _walk(trie, segment)
    return node.doc_id


def best_sequence_score(
    trie: DecodingTrie, scorer: NextTokenScorer, context, tokens: Sequence[int]
) -> float:
    """Length-normalized log-probability of one specific full generation
    (must end with the end token).  Used for exhaustive comparisons."""
    log_prob = 0.0
    prefix: tuple[int, ...] = ()
    for token in tokens:
        allowed = allowed_tokens(trie, prefix)
        probs = masked_step(scorer.score_next(context, prefix), allowed)
        if probs[token] <= 0.0:
            return float("-inf")
        log_prob += math.log(probs[token])
        prefix = prefix + (token,)
    return log_prob / len(tokens)
