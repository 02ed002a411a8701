"""Per-conversation retrieval orchestration and the facet-level split.

One conversation produces one run entry: infer the intent query, retrieve
the first-phase candidates, then optionally re-rank them by constrained
decoding.  Conversations are processed independently (optionally in a
thread pool) and the run is assembled in sorted topic order so output
files are deterministic regardless of scheduling.
"""

from __future__ import annotations

import random
from concurrent.futures import ThreadPoolExecutor
from math import floor
from typing import Mapping, Sequence

from . import DataError
from .conversation import (
    Conversation,
    DefaultSummarizer,
    FeatureStore,
    Summarizer,
    Topic,
    infer_query,
)
from .corpus import CorpusManifest
from .decoder import beam_decode, build_trie
from .evaluation import Run
from .index import InvertedIndex, retrieve
from .reranker import build_context

MODES = ("bm25-only", "rerank")


def run_retrieval(
    conversations: Sequence[Conversation],
    topics: Mapping[str, Topic],
    index: InvertedIndex,
    *,
    mode: str = "bm25-only",
    k: int = 100,
    manifest: CorpusManifest | None = None,
    scorer=None,
    store: FeatureStore | None = None,
    multimodal: bool = True,
    beams: int = 10,
    max_docs: int = 10,
    tag: str = "convsearch",
    jobs: int = 1,
    summarizer: Summarizer | None = None,
) -> Run:
    """Produce a TREC run covering every conversation.

    ``mode="rerank"`` needs a manifest and a scorer; image features are
    loaded only on the multi-modal path, so text-only runs never touch
    the feature store.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if mode == "rerank" and (manifest is None or scorer is None):
        raise ValueError("rerank mode needs a manifest and a scorer")
    seen: set[str] = set()
    for conversation in conversations:
        if conversation.topic_id in seen:
            raise DataError(
                f"duplicate topic {conversation.topic_id!r}: runs are keyed "
                "by topic, evaluate one conversation per topic"
            )
        seen.add(conversation.topic_id)
    active_summarizer = summarizer or DefaultSummarizer(topics)

    def process(conversation: Conversation) -> tuple[str, list[tuple[str, float]]]:
        if conversation.topic_id not in topics:
            raise DataError(f"unknown topic {conversation.topic_id!r}")
        topic_query = topics[conversation.topic_id].query
        inferred = infer_query(conversation, active_summarizer)
        candidates = retrieve(
            index, topic_query, inferred, k=k, topic_id=conversation.topic_id
        )
        if mode == "bm25-only":
            return conversation.topic_id, candidates.ranked
        vectors = ()
        if multimodal and store is not None:
            vectors = tuple(store.get(ref) for ref in conversation.image_refs)
        context = build_context(topic_query, inferred, manifest, vectors)
        trie = build_trie(candidates, manifest)
        ranked = beam_decode(
            trie, scorer, context, beam_width=beams, max_docs=max_docs
        )
        return conversation.topic_id, ranked.ranking

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(process, conversations))
    else:
        results = [process(c) for c in conversations]

    run = Run(tag=tag)
    for topic_id, ranking in sorted(results):
        run.add_topic(topic_id, ranking)
    return run


def split_facets(
    conversations: Sequence[Conversation],
    seed: int,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> tuple[list[Conversation], list[Conversation], list[Conversation]]:
    """Partition by (topic, facet): train gets floor(ratio * n) facets,
    the rest splits evenly between validation and test, odd leftovers go
    back to train.  All conversations of a facet travel together."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must sum to 1")
    facets = sorted({(c.topic_id, c.facet_id) for c in conversations})
    rng = random.Random(seed)
    rng.shuffle(facets)
    n = len(facets)
    n_train = floor(ratios[0] * n)
    rest = n - n_train
    n_val = rest // 2
    n_test = rest // 2
    n_train += rest - n_val - n_test
    train_keys = set(facets[:n_train])
    val_keys = set(facets[n_train : n_train + n_val])

    train, val, test = [], [], []
    for conversation in conversations:
        key = (conversation.topic_id, conversation.facet_id)
        if key in train_keys:
            train.append(conversation)
        elif key in val_keys:
            val.append(conversation)
        else:
            test.append(conversation)
    return train, val, test
