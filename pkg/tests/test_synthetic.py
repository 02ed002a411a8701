from __future__ import annotations

import subprocess
import sys

from convsearch.conversation import load_conversations, load_feature_store, load_topics
from convsearch.corpus import load_corpus
from convsearch.evaluation import read_qrels
from convsearch.index import build_index, retrieve
from convsearch.synthetic import generate, write_benchmark
from convsearch.text import tokenize


def test_generated_shape():
    bench = generate(seed=0)
    assert len(bench.corpus) == 200
    assert len(bench.topics) == 20
    assert len(bench.conversations) == 20
    assert len(bench.train_conversations) == 2 * 14
    assert len(bench.train_topics) == 14 and len(bench.eval_topics) == 6
    for conversation in bench.conversations:
        assert len(conversation.turns) == 4
        for ref in conversation.image_refs:
            assert ref in bench.features


def test_document_lengths_tie_exactly():
    bench = generate(seed=0)
    lengths = {len(tokenize(doc.body)) for doc in bench.corpus}
    assert len(lengths) == 1  # identical template means exact BM25 ties


def test_eval_relevant_docs_sit_at_highest_ids():
    bench = generate(seed=0)
    for topic_id, judged in bench.qrels.grades.items():
        relevant = sorted(d for d, g in judged.items() if g > 0)
        assert relevant == [f"{topic_id}d08", f"{topic_id}d09"]


def test_first_phase_pins_relevant_docs_last():
    bench = generate(seed=0)
    index = build_index(bench.corpus)
    topic = bench.topics["t00"]
    result = retrieve(index, topic.query, "", k=10, topic_id="t00")
    assert result.doc_ids == [f"t00d{j:02d}" for j in range(10)]


def test_train_facets_differ_from_eval_facet():
    bench = generate(seed=0)
    eval_facets = {c.topic_id: c.facet_id for c in bench.conversations}
    for conversation in bench.train_conversations:
        assert conversation.facet_id != eval_facets[conversation.topic_id]


def test_benchmark_files_roundtrip(tmp_path):
    bench = generate(seed=0, n_topics=6, n_eval_topics=2)
    paths = write_benchmark(bench, tmp_path)
    corpus = load_corpus(paths["corpus"])
    assert len(corpus) == 60
    topics = load_topics(paths["topics"])
    assert topics == bench.topics
    conversations = load_conversations(paths["conversations"], topics)
    assert conversations == bench.conversations
    store = load_feature_store(paths["features"])
    assert len(store) == len(bench.features)
    qrels = read_qrels(paths["qrels"])
    assert qrels.grades == bench.qrels.grades
    train_qrels = read_qrels(paths["train_qrels"])
    assert train_qrels.grades == bench.train_qrels


def test_numpy_fallback_env_flag():
    code = (
        "import os; os.environ['CONVSEARCH_NUMBA'] = '0'; "
        "from convsearch import _kernels; "
        "assert _kernels.BACKEND == 'numpy', _kernels.BACKEND; "
        "print(_kernels.BACKEND)"
    )
    result = subprocess.run(
        [sys.executable, "-c", code], capture_output=True, text=True
    )
    assert result.returncode == 0, result.stderr
    assert result.stdout.strip() == "numpy"
