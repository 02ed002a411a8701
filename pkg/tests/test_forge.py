from __future__ import annotations

import hashlib
import json
import random
from collections import Counter

import pytest

from convsearch import DataError, RemoteClientError
from convsearch.conversation import (
    Conversation,
    Facet,
    Topic,
    Turn,
    save_conversations,
)
from convsearch.forge import (
    ForgeConfig,
    ForgeStats,
    RemoteJudge,
    SingleTurnQA,
    StubJudge,
    filter_duplicates,
    load_qa_pool,
    refine,
    run_pipeline,
    sample,
    synthesize,
    truncate_on_reveal,
)

JUDGE = StubJudge()


def qa(topic: str, facet: str, q: str, a: str, images=()) -> SingleTurnQA:
    return SingleTurnQA(
        topic_id=topic, facet_id=facet, question=q, answer=a,
        image_refs=tuple(images),
    )


def simple_pool(n: int, topic: str = "t1", facet: str = "f1"):
    return [qa(topic, facet, f"question {i}?", f"answer {i}") for i in range(n)]


# -- synthesize ---------------------------------------------------------------


def test_synthesize_counts_ordered_pairs():
    # P(3, 2) = 6 ordered pairs
    out = list(synthesize(simple_pool(3), 2))
    assert len(out) == 6
    signatures = {tuple(t.question for t in c.turns) for c in out}
    assert len(signatures) == 6


def test_synthesize_insufficient_pool_yields_nothing():
    assert list(synthesize(simple_pool(1), 2)) == []


def test_synthesize_never_mixes_topics():
    pool = simple_pool(2, topic="t1") + simple_pool(2, topic="t2")
    out = list(synthesize(pool, 2))
    assert len(out) == 4
    assert all(len({qa_.topic_id for qa_ in [c]} | {c.topic_id}) == 1 for c in out)
    by_topic = Counter(c.topic_id for c in out)
    assert by_topic == {"t1": 2, "t2": 2}


def test_synthesize_is_deterministic_and_keeps_images():
    pool = [
        qa("t1", "f1", "q0?", "a0", images=("img0",)),
        qa("t1", "f1", "q1?", "a1", images=("img1", "img2")),
    ]
    first = list(synthesize(pool, 2))
    second = list(synthesize(pool, 2))
    assert first == second
    assert first[0].turns[0].image_refs == ("img0",)
    assert first[0].turns[1].image_refs == ("img1", "img2")


# -- sample -------------------------------------------------------------------


def test_sample_keeps_undersized_stream():
    pool = list(synthesize(simple_pool(3), 2))[:5]
    assert sample(iter(pool), 10, seed=1) == pool


def test_sample_deterministic_under_seed():
    stream = list(synthesize(simple_pool(7), 2))
    a = sample(iter(stream), 10, seed=42)
    b = sample(iter(stream), 10, seed=42)
    assert a == b
    c = sample(iter(stream), 10, seed=43)
    assert a != c  # overwhelmingly likely for 42 items choose 10


def test_sample_frequency_is_uniform():
    items = list(synthesize(simple_pool(2), 2)) + list(
        synthesize(simple_pool(2, topic="t2"), 2)
    )
    assert len(items) == 4
    counts = Counter()
    for seed in range(1000):
        (chosen,) = sample(iter(items), 1, seed=seed)
        counts[chosen.topic_id + chosen.turns[0].question] += 1
    assert len(counts) == 4
    for value in counts.values():
        assert 200 <= value <= 300


# -- duplicate filter ----------------------------------------------------------


def conv(turn_pairs, topic="t1", facet="f1") -> Conversation:
    return Conversation(
        topic_id=topic,
        facet_id=facet,
        turns=tuple(Turn(question=q, answer=a) for q, a in turn_pairs),
    )


def test_filter_rejects_exact_question_match():
    c = conv([("Same question?", "one"), ("same QUESTION?", "two")])
    assert filter_duplicates(c, JUDGE) is False


def test_filter_accepts_distinct_turns():
    c = conv([("First question?", "one"), ("Second question?", "two")])
    assert filter_duplicates(c, JUDGE) is True


def test_filter_planted_duplicates_count():
    convs = [
        conv([(f"q{i} left?", "a"), (f"q{i} right?", "b")]) for i in range(7)
    ] + [
        conv([(f"dup {i}?", "a"), (f"DUP {i}?", "b")]) for i in range(3)
    ]
    accepted = [c for c in convs if filter_duplicates(c, JUDGE)]
    assert len(accepted) == 7


# -- truncation ------------------------------------------------------------------


def test_truncation_at_planted_reveal():
    c = conv(
        [
            ("q1?", "nothing yet"),
            ("q2?", "I want crimson lamps"),
            ("q3?", "more talk"),
            ("q4?", "even more"),
        ]
    )
    cut = truncate_on_reveal(c, "crimson lamps", JUDGE)
    assert len(cut.turns) == 2
    assert cut.turns[-1].answer == "I want crimson lamps"


def test_truncation_identity_when_no_reveal():
    c = conv([("q1?", "nothing"), ("q2?", "still nothing")])
    assert truncate_on_reveal(c, "crimson lamps", JUDGE) == c


def test_reveal_at_final_turn_is_kept():
    c = conv([("q1?", "nothing"), ("q2?", "I want crimson lamps")])
    assert truncate_on_reveal(c, "crimson lamps", JUDGE) == c


def test_truncation_histogram_of_planted_positions():
    batches = []
    for position in (2, 3, 4):
        turns = [(f"q{i}?", "filler") for i in range(1, 5)]
        turns[position - 1] = (f"q{position}?", "the secret facet appears")
        batches.append(conv(turns))
    cut = [truncate_on_reveal(c, "secret facet", JUDGE) for c in batches]
    histogram = Counter(len(c.turns) for c in cut)
    assert histogram == {2: 1, 3: 1, 4: 1}


# -- refinement -------------------------------------------------------------------


def test_refine_tags_in_stage_order():
    c = conv([("q1?", "one"), ("q2?", "two"), ("q3?", "three")])
    refined = refine(c, "facet", JUDGE)
    tags = [t.answer.split()[0] for t in refined.turns]
    assert tags == ["[I]", "[P]", "[F]"]


def test_refine_single_turn_uses_opening_stage():
    c = conv([("q1?", "only answer")])
    refined = refine(c, "facet", JUDGE)
    assert refined.turns[0].answer == "[I] only answer"


def test_refine_preserves_structure_on_random_conversations():
    rng = random.Random(8)
    for _ in range(100):
        n = rng.randint(1, 4)
        c = conv([(f"q{i}? {rng.random():.3f}", f"a{i}") for i in range(n)])
        refined = refine(c, "facet", JUDGE)
        assert len(refined.turns) == len(c.turns)
        for before, after in zip(c.turns, refined.turns):
            assert before.question == after.question
            assert before.image_refs == after.image_refs


class FailingJudge(StubJudge):
    def refine(self, stage, facet, question, answer):
        raise ConnectionError("judge offline")


def test_refine_failure_leaves_conversation_and_reports():
    c = conv([("q1?", "one"), ("q2?", "two")])
    failures: list[str] = []
    refined = refine(c, "facet", FailingJudge(), failures)
    assert refined == c
    assert len(failures) == 1 and "judge offline" in failures[0]


# -- pipeline -----------------------------------------------------------------------


TOPICS = {
    "t1": Topic("t1", "desk lamps", (Facet("f1", "crimson lamps"),)),
}


def trace_pool():
    return [
        qa("t1", "f1", "Do you like tall lamps?", "yes tall ones"),
        qa("t1", "f1", "Do you like TALL lamps?", "maybe shorter"),
        qa("t1", "f1", "What color?", "I want crimson lamps"),
    ]


def test_pipeline_matches_hand_trace():
    # 6 ordered pairs; the two pairing QA0 with QA1 are duplicates (same
    # normalized question); of the remaining 4, the two starting with the
    # revealing QA2 truncate to one turn.
    config = ForgeConfig(turn_targets=(2,), sample_size=10, seed=0)
    output, stats = run_pipeline(trace_pool(), TOPICS, config, JUDGE)
    assert stats.synthesized == {2: 6}
    assert stats.sampled == {2: 6}
    assert stats.duplicates_rejected == 2
    assert stats.reveal_truncated == 2
    assert stats.refine_failures == 0
    assert stats.final_distribution == {1: 2, 2: 2}
    assert stats.input_total == stats.output_total + stats.duplicates_rejected
    assert len(output) == 4
    # refinement tagged every surviving answer
    for c in output:
        assert all(t.answer.startswith("[") for t in c.turns)


def test_pipeline_empty_pool():
    config = ForgeConfig(turn_targets=(2, 3, 4), sample_size=10, seed=0)
    output, stats = run_pipeline([], TOPICS, config, JUDGE)
    assert output == []
    assert stats.synthesized == {2: 0, 3: 0, 4: 0}
    assert stats.duplicates_rejected == 0
    assert stats.final_distribution == {}


def test_pipeline_reveal_early_empties_the_four_turn_bucket():
    # 4 distinct QAs, two of which reveal the facet: no permutation can
    # keep its reveal at turn 4, so the 4-turn bucket must end up empty;
    # earliest-reveal positions give buckets {1: 12, 2: 8, 3: 4}
    pool = [
        qa("t1", "f1", "q0?", "plain zero"),
        qa("t1", "f1", "q1?", "plain one"),
        qa("t1", "f1", "q2?", "I want crimson lamps now"),
        qa("t1", "f1", "q3?", "crimson lamps are the goal"),
    ]
    config = ForgeConfig(turn_targets=(4,), sample_size=100, seed=3)
    output, stats = run_pipeline(pool, TOPICS, config, JUDGE)
    assert stats.synthesized == {4: 24}
    assert stats.duplicates_rejected == 0
    assert stats.final_distribution == {1: 12, 2: 8, 3: 4}
    assert stats.final_distribution.get(4, 0) == 0
    assert stats.input_total == stats.output_total


def test_pipeline_deterministic_file_hashes(tmp_path):
    pool = simple_pool(6) + trace_pool()
    config = ForgeConfig(turn_targets=(2, 3), sample_size=15, seed=11)
    hashes = []
    for run_idx in range(2):
        output, stats = run_pipeline(pool, TOPICS, config, JUDGE)
        path = tmp_path / f"out{run_idx}.jsonl"
        save_conversations(output, path)
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        hashes.append((digest, stats.to_json()))
    assert hashes[0] == hashes[1]


def test_pipeline_unknown_topic_is_a_data_error():
    pool = simple_pool(2, topic="ghost") + simple_pool(2)
    config = ForgeConfig(turn_targets=(2,), sample_size=10, seed=0)
    with pytest.raises(DataError, match="ghost"):
        run_pipeline(pool, TOPICS, config, JUDGE)


def test_forge_config_validation():
    with pytest.raises(ValueError):
        ForgeConfig(sample_size=0)
    with pytest.raises(ValueError):
        ForgeConfig(turn_targets=(1,))


def test_load_qa_pool_roundtrip(tmp_path):
    path = tmp_path / "pool.jsonl"
    records = [
        {"topic_id": "t1", "facet_id": "f1", "question": "q?", "answer": "a",
         "image_refs": ["i1"]},
        {"topic_id": "t1", "facet_id": "f1", "question": "q2?", "answer": "a2"},
    ]
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n")
    pool = load_qa_pool(path)
    assert len(pool) == 2
    assert pool[0].image_refs == ("i1",)
    assert pool[1].image_refs == ()


def test_load_qa_pool_reports_bad_line(tmp_path):
    path = tmp_path / "pool.jsonl"
    path.write_text('{"topic_id": "t1"}\n')
    with pytest.raises(DataError, match="line 1"):
        load_qa_pool(path)


def test_remote_judge_unreachable_endpoint():
    judge = RemoteJudge(
        endpoint="http://127.0.0.1:9/unreachable", timeout=0.2,
        attempts=2, backoff=0.01,
    )
    with pytest.raises(RemoteClientError, match="127.0.0.1:9"):
        judge.reveals_intent("facet", "q?", "a")


def test_remote_judge_requires_endpoint(monkeypatch):
    monkeypatch.delenv("JUDGE_ENDPOINT", raising=False)
    with pytest.raises(RemoteClientError, match="JUDGE_ENDPOINT"):
        RemoteJudge()


def test_remote_judge_happy_path():
    import http.server
    import threading

    class Handler(http.server.BaseHTTPRequestHandler):
        def do_POST(self):
            length = int(self.headers["Content-Length"])
            payload = json.loads(self.rfile.read(length))
            if payload["task"] == "refine":
                body = {"text": f"refined {payload['stage']}"}
            else:
                body = {"answer": "yes"}
            raw = json.dumps(body).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(raw)))
            self.end_headers()
            self.wfile.write(raw)

        def log_message(self, *args):
            pass

    server = http.server.HTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        endpoint = f"http://127.0.0.1:{server.server_port}/judge"
        judge = RemoteJudge(endpoint=endpoint, timeout=5)
        assert judge.reveals_intent("facet", "q?", "a") is True
        assert judge.is_duplicate(
            Turn(question="q?", answer="a"), Turn(question="q?", answer="b")
        ) is True
        assert judge.refine("partial", "facet", "q?", "a") == "refined partial"
    finally:
        server.shutdown()
        thread.join()
