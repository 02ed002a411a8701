"""Multi-turn dataset construction from single-turn QA pairs.

Stages, in order: exhaustive ordered combination of same-topic QA pairs,
reservoir sampling per turn-count target, duplicate filtering, premature
intent-reveal truncation (a conversation revealing its facet before the
final turn is cut at the revealing turn and moves to the shorter-turn
bucket), and answer refinement with stage prompts (opening answers hide
the intent, middle answers hint at it, the final answer states it).

Truncation and refinement never drop a conversation, so the pipeline
conserves items: conversations in = conversations out + duplicates
rejected.  With the bundled deterministic stub judge the whole pipeline
is reproducible from (pool, seed).

Judges are pluggable: ``StubJudge`` answers from string rules,
``RemoteJudge`` posts prompts to a JSON endpoint configured through
``JUDGE_ENDPOINT`` / ``JUDGE_API_KEY``.
"""

from __future__ import annotations

import itertools
import json
import logging
import os
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Protocol, Sequence

from . import DataError, RemoteClientError
from .conversation import Conversation, Topic, Turn
from .text import tokenize

log = logging.getLogger(__name__)

REFINE_STAGES = ("initial", "partial", "final")

STAGE_TAGS = {"initial": "[I]", "partial": "[P]", "final": "[F]"}


@dataclass(frozen=True)
class SingleTurnQA:
    topic_id: str
    facet_id: str
    question: str
    answer: str
    image_refs: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.question or not self.answer:
            raise DataError("single-turn QA needs nonempty question and answer")

    def as_turn(self) -> Turn:
        return Turn(
            question=self.question, answer=self.answer, image_refs=self.image_refs
        )


class JudgeClient(Protocol):
    def is_duplicate(self, qa1: Turn, qa2: Turn) -> bool: ...

    def reveals_intent(self, facet: str, question: str, answer: str) -> bool: ...

    def refine(self, stage: str, facet: str, question: str, answer: str) -> str: ...


class StubJudge:
    """Deterministic string-rule judge for tests and offline runs.

    Duplicates are normalized exact question matches; the intent counts
    as revealed when the case-folded facet text occurs in the answer;
    refinement prefixes the answer with a stage tag.
    """

    def is_duplicate(self, qa1: Turn, qa2: Turn) -> bool:
        return tokenize(qa1.question) == tokenize(qa2.question)

    def reveals_intent(self, facet: str, question: str, answer: str) -> bool:
        return facet.casefold() in answer.casefold()

    def refine(self, stage: str, facet: str, question: str, answer: str) -> str:
        if stage not in REFINE_STAGES:
            raise ValueError(f"unknown refinement stage {stage!r}")
        return f"{STAGE_TAGS[stage]} {answer}"


DUPLICATE_PROMPT = (
    "Here are two question-answer pairs from one conversation. Do they "
    "convey similar information? Reply yes or no.\n"
    "Pair 1: Q: {q1} A: {a1}\nPair 2: Q: {q2} A: {a2}"
)

REVEAL_PROMPT = (
    "A user has a hidden intention. Judge whether this answer already "
    "makes that intention explicit. Reply yes or no.\n"
    "Hidden intention: {facet}\nQ: {question}\nA: {answer}"
)

REFINE_PROMPTS = {
    "initial": (
        "Rewrite the user's answer so it stays connected to the question "
        "but gives away nothing about the hidden intention, and does not "
        "contradict it.\nHidden intention: {facet}\nQ: {question}\nA: {answer}"
    ),
    "partial": (
        "Rewrite the user's answer so it hints at part of the hidden "
        "intention without stating it fully.\n"
        "Hidden intention: {facet}\nQ: {question}\nA: {answer}"
    ),
    "final": (
        "Rewrite the user's answer so it states the hidden intention "
        "clearly and directly.\nHidden intention: {facet}\nQ: {question}\nA: {answer}"
    ),
}


class RemoteJudge:
    """JSON-over-HTTP judge with bounded retries and backoff."""

    def __init__(
        self,
        endpoint: str | None = None,
        api_key: str | None = None,
        timeout: float = 30.0,
        attempts: int = 3,
        backoff: float = 0.5,
    ):
        self.endpoint = endpoint or os.environ.get("JUDGE_ENDPOINT", "")
        self.api_key = api_key if api_key is not None else os.environ.get("JUDGE_API_KEY", "")
        self.timeout = timeout
        self.attempts = attempts
        self.backoff = backoff
        if not self.endpoint:
            raise RemoteClientError(
                "no judge endpoint configured (set JUDGE_ENDPOINT)"
            )

    def _post(self, payload: dict) -> dict:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        for attempt in range(self.attempts):
            if attempt:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
            try:
                response = requests.post(
                    self.endpoint, json=payload, headers=headers, timeout=self.timeout
                )
                response.raise_for_status()
                return response.json()
            except Exception as exc:
                last_error = exc
        raise RemoteClientError(
            f"judge endpoint {self.endpoint} failed after "
            f"{self.attempts} attempts: {last_error}"
        )

    def _yes_no(self, payload: dict) -> bool:
        answer = str(self._post(payload).get("answer", "")).strip().lower()
        return answer.startswith("y")

    def is_duplicate(self, qa1: Turn, qa2: Turn) -> bool:
        prompt = DUPLICATE_PROMPT.format(
            q1=qa1.question, a1=qa1.answer, q2=qa2.question, a2=qa2.answer
        )
        return self._yes_no({"task": "is_duplicate", "prompt": prompt})

    def reveals_intent(self, facet: str, question: str, answer: str) -> bool:
        prompt = REVEAL_PROMPT.format(facet=facet, question=question, answer=answer)
        return self._yes_no({"task": "reveals_intent", "prompt": prompt})

    def refine(self, stage: str, facet: str, question: str, answer: str) -> str:
        if stage not in REFINE_STAGES:
            raise ValueError(f"unknown refinement stage {stage!r}")
        prompt = REFINE_PROMPTS[stage].format(
            facet=facet, question=question, answer=answer
        )
        reply = self._post({"task": "refine", "stage": stage, "prompt": prompt})
        return str(reply.get("text", "")).strip() or answer


@dataclass
class ForgeConfig:
    turn_targets: tuple[int, ...] = (2, 3, 4)
    sample_size: int = 10000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.sample_size < 1:
            raise ValueError("sample_size must be >= 1")
        if any(t < 2 or t > 4 for t in self.turn_targets):
            raise ValueError("turn targets must lie in 2..4")


def synthesize(
    qa_pool: Sequence[SingleTurnQA], turn_count: int
) -> Iterator[Conversation]:
    """Every ordered combination of ``turn_count`` distinct QA pairs that
    share a topic and facet, in lexicographic pool-index order.

    Groups with fewer QA pairs than ``turn_count`` contribute nothing.
    """
    if turn_count < 2 or turn_count > 4:
        raise ValueError("turn_count must lie in 2..4")
    groups: dict[tuple[str, str], list[SingleTurnQA]] = {}
    for qa in qa_pool:
        groups.setdefault((qa.topic_id, qa.facet_id), []).append(qa)
    for (topic_id, facet_id), members in groups.items():
        for combo in itertools.permutations(range(len(members)), turn_count):
            yield Conversation(
                topic_id=topic_id,
                facet_id=facet_id,
                turns=tuple(members[i].as_turn() for i in combo),
            )


def _reservoir(stream: Iterable[Conversation], n: int, seed: int):
    rng = random.Random(seed)
    kept: list[Conversation] = []
    seen = 0
    for item in stream:
        if seen < n:
            kept.append(item)
        else:
            j = rng.randrange(seen + 1)
            if j < n:
                kept[j] = item
        seen += 1
    return kept, seen


def sample(stream: Iterable[Conversation], n: int, seed: int) -> list[Conversation]:
    """Uniform reservoir sample of min(n, len(stream)), seed-reproducible."""
    if n < 1:
        raise ValueError("n must be >= 1")
    kept, _ = _reservoir(stream, n, seed)
    return kept


def filter_duplicates(conversation: Conversation, judge: JudgeClient) -> bool:
    """True to accept; rejects when any turn pair is judged duplicate."""
    turns = conversation.turns
    for i in range(len(turns)):
        for j in range(i + 1, len(turns)):
            if judge.is_duplicate(turns[i], turns[j]):
                return False
    return True


def truncate_on_reveal(
    conversation: Conversation, facet: str, judge: JudgeClient
) -> Conversation:
    """Cut at the earliest turn that reveals the facet before the end."""
    turns = conversation.turns
    for t, turn in enumerate(turns[:-1], start=1):
        if judge.reveals_intent(facet, turn.question, turn.answer):
            return Conversation(
                topic_id=conversation.topic_id,
                facet_id=conversation.facet_id,
                turns=turns[:t],
            )
    return conversation


def _stage_for(t: int, total: int) -> str:
    if t == 1:
        return "initial"
    if t < total:
        return "partial"
    return "final"


def refine(
    conversation: Conversation,
    facet: str,
    judge: JudgeClient,
    failures: list[str] | None = None,
) -> Conversation:
    """Replace answers stage by stage; questions and images untouched.

    A judge failure leaves the conversation unrefined and is reported
    through ``failures`` and the log.
    """
    total = len(conversation.turns)
    try:
        new_turns = tuple(
            Turn(
                question=turn.question,
                answer=judge.refine(_stage_for(t, total), facet, turn.question, turn.answer),
                image_refs=turn.image_refs,
            )
            for t, turn in enumerate(conversation.turns, start=1)
        )
    except Exception as exc:
        log.warning(
            "refinement failed for topic %s facet %s: %s",
            conversation.topic_id, conversation.facet_id, exc,
        )
        if failures is not None:
            failures.append(f"{conversation.topic_id}/{conversation.facet_id}: {exc}")
        return conversation
    return Conversation(
        topic_id=conversation.topic_id,
        facet_id=conversation.facet_id,
        turns=new_turns,
    )


@dataclass
class ForgeStats:
    synthesized: dict[int, int] = field(default_factory=dict)
    sampled: dict[int, int] = field(default_factory=dict)
    duplicates_rejected: int = 0
    reveal_truncated: int = 0
    refine_failures: int = 0
    final_distribution: dict[int, int] = field(default_factory=dict)

    @property
    def input_total(self) -> int:
        return sum(self.sampled.values())

    @property
    def output_total(self) -> int:
        return sum(self.final_distribution.values())

    def to_json(self) -> str:
        return json.dumps(
            {
                "synthesized": {str(k): v for k, v in sorted(self.synthesized.items())},
                "sampled": {str(k): v for k, v in sorted(self.sampled.items())},
                "duplicates_rejected": self.duplicates_rejected,
                "reveal_truncated": self.reveal_truncated,
                "refine_failures": self.refine_failures,
                "final_distribution": {
                    str(k): v for k, v in sorted(self.final_distribution.items())
                },
                "conversations_in": self.input_total,
                "conversations_out": self.output_total,
            },
            sort_keys=True,
            indent=2,
        )


def run_pipeline(
    qa_pool: Sequence[SingleTurnQA],
    topics: Mapping[str, Topic],
    config: ForgeConfig,
    judge: JudgeClient,
) -> tuple[list[Conversation], ForgeStats]:
    """synthesize -> sample -> filter duplicates -> truncate -> refine."""
    stats = ForgeStats()
    failures: list[str] = []
    output: list[Conversation] = []

    def facet_text(conversation: Conversation) -> str:
        if conversation.topic_id not in topics:
            raise DataError(f"unknown topic {conversation.topic_id!r} in QA pool")
        return topics[conversation.topic_id].facet(conversation.facet_id).description

    for target in sorted(config.turn_targets):
        kept, seen = _reservoir(
            synthesize(qa_pool, target), config.sample_size, config.seed
        )
        stats.synthesized[target] = seen
        stats.sampled[target] = len(kept)
        for conversation in kept:
            if not filter_duplicates(conversation, judge):
                stats.duplicates_rejected += 1
                continue
            facet = facet_text(conversation)
            truncated = truncate_on_reveal(conversation, facet, judge)
            if len(truncated.turns) != len(conversation.turns):
                stats.reveal_truncated += 1
            refined = refine(truncated, facet, judge, failures)
            output.append(refined)
            bucket = len(refined.turns)
            stats.final_distribution[bucket] = stats.final_distribution.get(bucket, 0) + 1
    stats.refine_failures = len(failures)
    return output, stats


def load_qa_pool(path: str | Path) -> list[SingleTurnQA]:
    pool: list[SingleTurnQA] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                pool.append(
                    SingleTurnQA(
                        topic_id=record["topic_id"],
                        facet_id=record["facet_id"],
                        question=record["question"],
                        answer=record["answer"],
                        image_refs=tuple(record.get("image_refs", ())),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from None
    return pool
