"""Acceptance suite: one test per criterion, each printing a PASS/FAIL
line (run with ``pytest tests/test_acceptance.py -s`` to see them).

Large-scale published numbers are out of reach at desk scale by design;
these criteria substitute exact oracles, property checks, and a
planted-signal end-to-end benchmark.
"""

from __future__ import annotations

import math
import random
import time
from contextlib import contextmanager

import numpy as np
import pytest

from trie_helpers import StaticScorer, brute_allowed, complete_walk, random_trie


@contextmanager
def criterion(name: str):
    try:
        yield
    except BaseException:
        print(f"\n[acceptance] {name}: FAIL")
        raise
    print(f"\n[acceptance] {name}: PASS")


# -- 1. BM25 oracle equivalence ------------------------------------------------


def test_bm25_oracle_equivalence():
    from convsearch.corpus import Corpus, Document
    from convsearch.index import build_index, retrieve
    from convsearch.text import tokenize
    from test_index import brute_force_ranking

    with criterion("bm25 oracle equivalence, 100 corpora < 5s"):
        rng = random.Random(20240817)
        vocab = [f"w{i}" for i in range(25)]
        started = time.perf_counter()
        for _ in range(100):
            n_docs = rng.randint(2, 50)
            bodies = {
                f"d{i:03d}": " ".join(rng.choices(vocab, k=rng.randint(3, 30)))
                for i in range(n_docs)
            }
            corpus = Corpus()
            for doc_id, body in bodies.items():
                corpus.add_document(Document(doc_id, "", body))
            index = build_index(corpus)
            topic = " ".join(rng.choices(vocab, k=rng.randint(1, 3)))
            inferred = " ".join(rng.choices(vocab, k=rng.randint(0, 4)))
            expected = brute_force_ranking(bodies, tokenize(topic) + tokenize(inferred))
            got = retrieve(index, topic, inferred, k=n_docs)
            assert got.doc_ids == [d for d, _ in expected]
        elapsed = time.perf_counter() - started
        assert elapsed < 5.0, f"took {elapsed:.2f}s"


# -- 2. metric oracle equivalence ------------------------------------------------


def test_metric_oracle_equivalence():
    from convsearch.evaluation import Qrels, Run, mrr, ndcg_at, precision_at
    from test_evaluation import (
        make_qrels,
        make_run,
        random_instance,
        ref_mrr,
        ref_ndcg,
        ref_precision,
    )

    with criterion("metric oracle equivalence + hand fixtures"):
        rng = random.Random(99)
        for _ in range(100):
            rankings, grades = random_instance(rng)
            run = make_run(rankings)
            qrels = make_qrels(grades)
            assert abs(mrr(run, qrels) - ref_mrr(rankings, grades)) < 1e-12
            for k in (1, 3, 5):
                assert abs(
                    precision_at(run, qrels, k) - ref_precision(rankings, grades, k)
                ) < 1e-12
                assert abs(
                    ndcg_at(run, qrels, k) - ref_ndcg(rankings, grades, k)
                ) < 1e-12
        # frozen hand computations
        run = make_run({"t1": ["x", "a", "y"], "t2": ["x", "y", "z", "b"]})
        qrels = make_qrels({"t1": {"a": 1}, "t2": {"b": 1}})
        assert mrr(run, qrels) == 0.375
        run = make_run({"t1": ["x", "a", "y"]})
        qrels = make_qrels({"t1": {"a": 1}})
        assert abs(ndcg_at(run, qrels, 3) - 1.0 / math.log2(3.0)) < 1e-12


# -- 3. constrained decoding validity --------------------------------------------


def test_constrained_decoding_validity():
    from convsearch.decoder import allowed_tokens, beam_search, parse_generation

    with criterion("1000 random tries: parseable decodes, exact allowed sets"):
        rng = random.Random(4242)
        np_rng = np.random.default_rng(4242)
        for trial in range(1000):
            trie = random_trie(rng, max_candidates=20)
            scorer = StaticScorer(np_rng.normal(scale=1.5, size=16))
            best = beam_search(trie, scorer, None, beam_width=3, max_docs=3)
            assert best is not None
            docs = parse_generation(best.tokens, trie)
            assert docs and all(d in trie.doc_tokens for d in docs)
            # oracle equivalence along the decoded sequence
            prefix: tuple[int, ...] = ()
            for token in best.tokens:
                assert allowed_tokens(trie, prefix) == brute_allowed(trie, prefix)
                prefix = prefix + (token,)
            # plus one oracle-checked random walk per trie
            walked = complete_walk(trie, rng)
            parse_generation(walked, trie)


# -- 4. loss fixtures ---------------------------------------------------------------


def test_loss_fixtures():
    from convsearch.reranker import LossConfig, combined_loss, lm_loss, rank_loss
    from convsearch.scorer import ScorerContext
    from convsearch.decoder import trie_from_sequences
    from convsearch.corpus import END_ID

    with criterion("rank/total/lm loss fixtures"):
        assert rank_loss(1.0, 4.0, 2.0) == 0.0
        assert rank_loss(3.0, 2.0, 2.0) == 3.0
        assert rank_loss(5.0, 5.0, 2.0) == 2.0
        config = LossConfig(margin=2.0, lambda_rank=0.75)
        assert combined_loss(3.0, 2.0, config) == 5.25
        assert combined_loss(1.0, 4.0, config) == 1.0

        uniform = StaticScorer(np.zeros(16))
        context = ScorerContext(text_tokens=(3,))
        chain = trie_from_sequences({"A": (3, 4)}, ["A"])
        assert lm_loss(uniform, context, (3, 4), chain) == 0.0
        assert lm_loss(uniform, context, (3, 4, END_ID), chain) == 0.0
        forked = trie_from_sequences(
            {"A": (3, 6), "B": (3, 7), "C": (3, 8), "D": (4, 9)},
            ["A", "B", "C", "D"],
        )
        loss = lm_loss(uniform, context, (3, 6), forked)
        assert abs(loss - (math.log(2) + math.log(3))) < 1e-9


# -- 5. gradient check -----------------------------------------------------------------


def test_gradient_check_twenty_configurations():
    from test_reranker import gradient_check_once

    with criterion("analytic vs finite-difference gradients, 20 configs"):
        worst = max(gradient_check_once(seed) for seed in range(20))
        assert worst < 1e-4, f"worst relative error {worst:.2e}"


# -- 6. end-to-end planted-signal benchmark ----------------------------------------------


def test_end_to_end_synthetic_benchmark():
    from convsearch.conversation import DefaultSummarizer, infer_query
    from convsearch.corpus import assign_keyword_ids
    from convsearch.evaluation import Qrels, mrr
    from convsearch.index import build_index, retrieve
    from convsearch.pipeline import run_retrieval
    from convsearch.reranker import (
        LossConfig,
        build_context,
        build_training_set,
        train,
    )
    from convsearch.scorer import TrainableScorer, vocab_hash, vocab_size
    from convsearch.synthetic import generate, train_key

    with criterion("planted-signal benchmark: rerank > bm25, images >= text"):
        started = time.perf_counter()
        bench = generate(seed=0)
        assert len(bench.corpus) == 200 and len(bench.topics) == 20
        manifest = assign_keyword_ids(bench.corpus)
        index = build_index(bench.corpus)
        summarizer = DefaultSummarizer(bench.topics)

        keys, candidate_sets, contexts = [], [], []
        for conversation in bench.train_conversations:
            key = train_key(conversation)
            topic_query = bench.topics[conversation.topic_id].query
            inferred = infer_query(conversation, summarizer)
            candidate_sets.append(
                retrieve(index, topic_query, inferred, k=10, topic_id=key)
            )
            vectors = tuple(bench.features.get(r) for r in conversation.image_refs)
            contexts.append(build_context(topic_query, inferred, manifest, vectors))
            keys.append(key)
        examples, report = build_training_set(
            keys, candidate_sets, contexts, bench.train_qrels, manifest
        )
        assert report["built"] == len(bench.train_conversations)

        config = LossConfig(learning_rate=0.3, batch_size=2)
        params, curve = train(
            examples, config, epochs=80, seed=0,
            n_vocab=vocab_size(manifest), d_img=bench.features.dim,
            d_model=64, vocab_hash=vocab_hash(manifest),
        )
        assert curve[-1] < curve[0]

        eval_convs = [
            c for c in bench.conversations if c.topic_id in bench.eval_topics
        ]
        eval_qrels = Qrels(
            grades={t: bench.qrels.grades[t] for t in bench.eval_topics}
        )
        scorer = TrainableScorer(params)
        shared = dict(manifest=manifest, scorer=scorer, store=bench.features, k=10)
        run_bm25 = run_retrieval(
            eval_convs, bench.topics, index, mode="bm25-only", k=10, tag="bm25"
        )
        run_multi = run_retrieval(
            eval_convs, bench.topics, index, mode="rerank",
            multimodal=True, tag="multimodal", **shared,
        )
        run_text = run_retrieval(
            eval_convs, bench.topics, index, mode="rerank",
            multimodal=False, tag="textonly", **shared,
        )
        mrr_bm25 = mrr(run_bm25, eval_qrels)
        mrr_multi = mrr(run_multi, eval_qrels)
        mrr_text = mrr(run_text, eval_qrels)
        elapsed = time.perf_counter() - started
        print(
            f"\n[benchmark] mrr bm25={mrr_bm25:.4f} multimodal={mrr_multi:.4f} "
            f"text-only={mrr_text:.4f} ({elapsed:.1f}s)"
        )
        # (a) trained multi-modal re-ranker beats first phase by >= 5 points
        assert mrr_multi - mrr_bm25 >= 0.05
        # (b) images help on these 4-turn conversations
        assert all(len(c.turns) == 4 for c in eval_convs)
        assert mrr_multi >= mrr_text
        # runtime bound (criterion says < 10 minutes on a laptop CPU)
        assert elapsed < 600.0


# -- 7. forge conservation ------------------------------------------------------------------


def test_forge_conservation_and_determinism(tmp_path):
    import hashlib

    from convsearch.conversation import Facet, Topic, save_conversations
    from convsearch.forge import ForgeConfig, SingleTurnQA, StubJudge, run_pipeline

    with criterion("forge conservation: hand-traced buckets, stable hashes"):
        topics = {"t1": Topic("t1", "desk lamps", (Facet("f1", "crimson lamps"),))}
        pool = [
            SingleTurnQA("t1", "f1", "Do you like tall lamps?", "yes tall ones"),
            SingleTurnQA("t1", "f1", "Do you like TALL lamps?", "maybe shorter"),
            SingleTurnQA("t1", "f1", "What color?", "I want crimson lamps"),
        ]
        config = ForgeConfig(turn_targets=(2,), sample_size=10, seed=0)
        output, stats = run_pipeline(pool, topics, config, StubJudge())
        assert stats.synthesized == {2: 6}
        assert stats.duplicates_rejected == 2
        assert stats.reveal_truncated == 2
        assert stats.final_distribution == {1: 2, 2: 2}
        assert stats.input_total == stats.output_total + stats.duplicates_rejected

        # planted reveals force the 4-turn bucket empty: {1: 12, 2: 8, 3: 4}
        pool4 = [
            SingleTurnQA("t1", "f1", "q0?", "plain zero"),
            SingleTurnQA("t1", "f1", "q1?", "plain one"),
            SingleTurnQA("t1", "f1", "q2?", "I want crimson lamps now"),
            SingleTurnQA("t1", "f1", "q3?", "crimson lamps are the goal"),
        ]
        config4 = ForgeConfig(turn_targets=(4,), sample_size=100, seed=3)
        _, stats4 = run_pipeline(pool4, topics, config4, StubJudge())
        assert stats4.final_distribution == {1: 12, 2: 8, 3: 4}
        assert stats4.input_total == stats4.output_total

        digests = []
        for run_idx in range(2):
            out, st = run_pipeline(pool + pool4, topics, config, StubJudge())
            path = tmp_path / f"forge{run_idx}.jsonl"
            save_conversations(out, path)
            digests.append(
                (hashlib.sha256(path.read_bytes()).hexdigest(), st.to_json())
            )
        assert digests[0] == digests[1]


# -- 8. relative delta convention ----------------------------------------------------------


def test_relative_delta_convention():
    from convsearch.evaluation import compare_runs
    from test_evaluation import make_qrels, make_run

    with criterion("relative MRR delta: 0.50 -> 0.5644 is +12.88%"):
        grades = {}
        base = {}
        system = {}
        for i in range(5000):
            topic = f"t{i:04d}"
            grades[topic] = {"rel": 1}
            base[topic] = ["rel"] if i < 2500 else ["junk"]
            system[topic] = ["rel"] if i < 2822 else ["junk"]
        deltas = compare_runs(make_run(base), make_run(system), make_qrels(grades))
        assert abs(deltas["mrr"]["baseline"] - 0.50) < 1e-12
        assert abs(deltas["mrr"]["system"] - 0.5644) < 1e-12
        assert abs(deltas["mrr"]["relative"] - 0.1288) < 1e-12
