"""Planted-signal benchmark: a desk-scale corpus where re-ranking must
beat first-phase retrieval and images must beat text-only.

Layout: 20 topics, 10 documents each, built from one 12-token body
template so lengths tie exactly under BM25 and within-topic order falls
back to ascending doc id.  Documents carry the marker terms of one of
four style clusters, in blocks: positions 0-2, 3-5, 6-7, 8-9 hold the
topic's rotation of clusters.  A facet names a cluster; the documents of
that cluster are the facet's relevant set.

Conversations answer clarifying questions affirmatively but vaguely (no
marker words) and attach one image per turn drawn from the facet
cluster's centroid plus noise, so the only route from a conversation to
its relevant documents is image cluster -> marker keyword.  Every topic
trains on two facets with different clusters, which makes topic-term
shortcuts useless.  Evaluation facets target the cluster stored at the
highest doc ids, pinning the first-phase MRR to 1/9 per topic.

Identifier vocabulary is deliberately closed: markers, filler terms (a
shared pool rotated per topic), and each topic's two query words, so
every branch token type in a held-out trie was seen during training.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .conversation import (
    Conversation,
    Facet,
    FeatureStore,
    Topic,
    Turn,
    save_conversations,
    save_feature_store,
)
from .corpus import Corpus, Document, save_corpus
from .evaluation import Qrels

MARKERS = (
    ("crimson", "scarlet", "ruby"),
    ("azure", "cobalt", "sapphire"),
    ("amber", "golden", "honey"),
    ("emerald", "jade", "olive"),
)

ADJECTIVES = (
    "walnut", "velvet", "copper", "maple", "ceramic", "woven", "frosted",
    "carved", "braided", "enamel", "pewter", "rattan", "marble", "linen",
    "bamboo", "leather", "wrought", "oak", "pine", "slate",
)

NOUNS = (
    "cabinets", "teapots", "lanterns", "benches", "mirrors", "baskets",
    "rugs", "vases", "stools", "shelves", "clocks", "kettles", "frames",
    "trays", "chairs", "desks", "jugs", "bowls", "racks", "chests",
)

QUESTIONS = (
    "Which finish direction should we explore?",
    "Does this overall mood match what you pictured?",
    "Should we keep following this palette?",
    "Is this the final look you are after?",
)

ANSWERS = (
    "yes keep going this direction",
    "yes that mood fits nicely",
    "yes exactly this palette works",
    "yes precisely that final look",
)

# shared across topics, rotated per topic: no filler correlates with
# relevance globally, yet identifiers within a topic stay distinct
FILLERS = (
    "stock", "series", "lineup", "edition", "variant",
    "issue", "batch", "gamut", "selection", "assortment",
)

D_IMG = 8
DOCS_PER_TOPIC = 10
N_CLUSTERS = len(MARKERS)

# doc positions per cluster-rotation slot: the facet cluster used for
# evaluation sits in the last block (highest doc ids)
CLUSTER_BLOCKS = ((1, (0, 1, 2)), (2, (3, 4, 5)), (3, (6, 7)), (0, (8, 9)))


@dataclass
class SyntheticBenchmark:
    corpus: Corpus
    topics: dict[str, Topic]
    conversations: list[Conversation]          # one per topic, eval facet
    train_conversations: list[Conversation]    # two per training topic
    features: FeatureStore
    qrels: Qrels                               # topic-keyed, eval facets
    train_qrels: dict[str, dict[str, int]]     # keyed "topic#facet"
    train_topics: list[str]
    eval_topics: list[str]


def train_key(conversation: Conversation) -> str:
    return f"{conversation.topic_id}#{conversation.facet_id}"


def _centroid(cluster: int) -> np.ndarray:
    base = np.zeros(D_IMG)
    base[2 * cluster] = 2.0
    base[2 * cluster + 1] = 1.0
    return base


def _doc_body(adj: str, noun: str, markers: tuple[str, str, str], filler: str) -> str:
    m0, m1, m2 = markers
    return (
        f"{adj} {noun} {m0} {m1}. "
        f"{m0} {m2} {noun} {m1}. "
        f"{m0} {noun} {adj} {filler}."
    )


def _cluster_of_position(topic_index: int, position: int) -> int:
    for offset, positions in CLUSTER_BLOCKS:
        if position in positions:
            return (topic_index + offset) % N_CLUSTERS
    raise ValueError(position)


def _relevant_positions(topic_index: int, cluster: int) -> list[int]:
    return [
        j for j in range(DOCS_PER_TOPIC)
        if _cluster_of_position(topic_index, j) == cluster
    ]


def generate(
    seed: int = 0,
    n_topics: int = 20,
    n_eval_topics: int = 6,
    feature_noise: float = 0.15,
) -> SyntheticBenchmark:
    if n_topics > len(ADJECTIVES):
        raise ValueError(f"at most {len(ADJECTIVES)} topics supported")
    rng = np.random.default_rng(seed)
    corpus = Corpus()
    topics: dict[str, Topic] = {}
    conversations: list[Conversation] = []
    train_conversations: list[Conversation] = []
    features = FeatureStore(dim=D_IMG, provenance="synthetic cluster centroids")
    qrels = Qrels()
    train_qrels: dict[str, dict[str, int]] = {}

    topic_ids = [f"t{i:02d}" for i in range(n_topics)]
    train_topics = topic_ids[: n_topics - n_eval_topics]
    eval_topics = topic_ids[n_topics - n_eval_topics :]

    def make_conversation(topic_id: str, facet_id: str, cluster: int) -> Conversation:
        turns = []
        for t in range(4):
            image_id = f"{topic_id}{facet_id}img{t}"
            features._features[image_id] = _centroid(cluster) + rng.normal(
                0.0, feature_noise, size=D_IMG
            )
            turns.append(
                Turn(question=QUESTIONS[t], answer=ANSWERS[t], image_refs=(image_id,))
            )
        return Conversation(topic_id=topic_id, facet_id=facet_id, turns=tuple(turns))

    for i, topic_id in enumerate(topic_ids):
        adj, noun = ADJECTIVES[i], NOUNS[i]
        facets = tuple(
            Facet(f"f{c}", f"find {MARKERS[c][0]} {noun}") for c in range(N_CLUSTERS)
        )
        topics[topic_id] = Topic(topic_id=topic_id, query=f"{adj} {noun}", facets=facets)

        for j in range(DOCS_PER_TOPIC):
            cluster = _cluster_of_position(i, j)
            filler = FILLERS[(i + j) % len(FILLERS)]
            corpus.add_document(
                Document(
                    doc_id=f"{topic_id}d{j:02d}",
                    title="",
                    body=_doc_body(adj, noun, MARKERS[cluster], filler),
                )
            )

        def grades_for(cluster: int) -> dict[str, int]:
            positions = _relevant_positions(i, cluster)
            return {
                f"{topic_id}d{j:02d}": (2 if rank == 0 else 1)
                for rank, j in enumerate(positions)
            }

        # evaluation facet: the cluster stored at the highest doc ids
        eval_cluster = i % N_CLUSTERS
        conversations.append(
            make_conversation(topic_id, f"f{eval_cluster}", eval_cluster)
        )
        judged = {f"{topic_id}d{j:02d}": 0 for j in range(DOCS_PER_TOPIC)}
        judged.update(grades_for(eval_cluster))
        qrels.grades[topic_id] = judged

        if topic_id in train_topics:
            for offset in (1, 2):
                cluster = (i + offset) % N_CLUSTERS
                conversation = make_conversation(topic_id, f"f{cluster}", cluster)
                train_conversations.append(conversation)
                judged = {f"{topic_id}d{j:02d}": 0 for j in range(DOCS_PER_TOPIC)}
                judged.update(grades_for(cluster))
                train_qrels[train_key(conversation)] = judged

    return SyntheticBenchmark(
        corpus=corpus,
        topics=topics,
        conversations=conversations,
        train_conversations=train_conversations,
        features=features,
        qrels=qrels,
        train_qrels=train_qrels,
        train_topics=train_topics,
        eval_topics=eval_topics,
    )


def write_benchmark(bench: SyntheticBenchmark, directory: str | Path) -> dict[str, Path]:
    """Serialize every artifact into a directory; returns the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "corpus": directory / "corpus.jsonl",
        "topics": directory / "topics.jsonl",
        "conversations": directory / "conversations.jsonl",
        "train_conversations": directory / "train_conversations.jsonl",
        "features": directory / "features.tsv",
        "qrels": directory / "qrels.txt",
        "train_qrels": directory / "train_qrels.txt",
    }
    save_corpus(bench.corpus, paths["corpus"])
    with open(paths["topics"], "w", encoding="utf-8") as fh:
        for topic in bench.topics.values():
            fh.write(
                json.dumps(
                    {
                        "topic_id": topic.topic_id,
                        "query": topic.query,
                        "facets": [
                            {"facet_id": f.facet_id, "description": f.description}
                            for f in topic.facets
                        ],
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    save_conversations(bench.conversations, paths["conversations"])
    save_conversations(bench.train_conversations, paths["train_conversations"])
    save_feature_store(bench.features, paths["features"])
    with open(paths["qrels"], "w", encoding="utf-8") as fh:
        for topic_id in sorted(bench.qrels.grades):
            for doc_id, grade in sorted(bench.qrels.grades[topic_id].items()):
                fh.write(f"{topic_id} 0 {doc_id} {grade}\n")
    with open(paths["train_qrels"], "w", encoding="utf-8") as fh:
        for key in sorted(bench.train_qrels):
            for doc_id, grade in sorted(bench.train_qrels[key].items()):
                fh.write(f"{key} 0 {doc_id} {grade}\n")
    return paths
