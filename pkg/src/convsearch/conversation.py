"""Clarification-conversation data model and inferred-query extraction.

A conversation references its topic and hidden facet by id; topic texts
and facet descriptions live in a separate topics registry file.  The
default intent summarizer is fully deterministic: it emits the topic's
terms followed by content terms of affirmatively-answered turns, dropping
terms the user rejected (terms of questions that got a negative answer).
An answer counts as negative when the first token that is either a
negation marker or a non-stopword is a negation marker; otherwise it is
affirmative.  On conflicting turns the latest mention wins.

File formats (UTF-8):

* topics: JSON lines ``{"topic_id", "query", "facets": [{"facet_id",
  "description"}]}``
* conversations: JSON lines ``{"topic_id", "facet_id", "turns":
  [{"question", "image_refs", "answer"}]}``
* image features: header line ``dim=<D>``, optional ``# provenance``
  comment lines, then rows ``image_id<TAB>f32,f32,...``
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol

import numpy as np

from . import DataError, RemoteClientError
from .text import NEGATIONS, STOPWORDS, tokenize

MAX_TURNS = 4


@dataclass(frozen=True)
class Facet:
    facet_id: str
    description: str

    def __post_init__(self) -> None:
        if not self.description:
            raise DataError(f"facet {self.facet_id!r} has an empty description")


@dataclass(frozen=True)
class Topic:
    topic_id: str
    query: str
    facets: tuple[Facet, ...]

    def __post_init__(self) -> None:
        if not self.facets:
            raise DataError(f"topic {self.topic_id!r} has no facets")

    def facet(self, facet_id: str) -> Facet:
        for facet in self.facets:
            if facet.facet_id == facet_id:
                return facet
        raise DataError(f"topic {self.topic_id!r} has no facet {facet_id!r}")


@dataclass(frozen=True)
class Turn:
    question: str
    answer: str
    image_refs: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.question or not self.answer:
            raise DataError("turn question and answer must be nonempty")


@dataclass(frozen=True)
class Conversation:
    topic_id: str
    facet_id: str
    turns: tuple[Turn, ...]

    def __post_init__(self) -> None:
        if not 1 <= len(self.turns) <= MAX_TURNS:
            raise DataError(
                f"conversation on topic {self.topic_id!r} has {len(self.turns)} "
                f"turns, expected 1..{MAX_TURNS}"
            )

    @property
    def image_refs(self) -> tuple[str, ...]:
        return tuple(ref for turn in self.turns for ref in turn.image_refs)


@dataclass(frozen=True)
class ImageFeature:
    image_id: str
    vector: np.ndarray
    provenance: str = ""


class Summarizer(Protocol):
    def summarize(self, conversation: Conversation) -> str: ...


def is_affirmative(answer: str) -> bool:
    """Polarity of an answer; all-stopword answers default to affirmative."""
    for token in tokenize(answer):
        if token in NEGATIONS:
            return False
        if token not in STOPWORDS:
            return True
    return True


class DefaultSummarizer:
    """Deterministic term-level intent summary, no remote model involved."""

    def __init__(self, topics: Mapping[str, Topic]):
        self._topics = topics

    def summarize(self, conversation: Conversation) -> str:
        if conversation.topic_id not in self._topics:
            raise DataError(f"unknown topic {conversation.topic_id!r}")
        topic_terms = tokenize(self._topics[conversation.topic_id].query)
        contributed: list[str] = []
        rejected: set[str] = set()
        for turn in conversation.turns:
            if is_affirmative(turn.answer):
                for term in tokenize(turn.answer):
                    if term in STOPWORDS or term in NEGATIONS:
                        continue
                    rejected.discard(term)
                    if term not in contributed:
                        contributed.append(term)
            else:
                for term in tokenize(turn.question):
                    if term in STOPWORDS:
                        continue
                    rejected.add(term)
                    if term in contributed:
                        contributed.remove(term)
        seen = set(topic_terms)
        extra = [t for t in contributed if t not in rejected and t not in seen]
        return " ".join(topic_terms + extra)


SUMMARY_PROMPT = (
    "Summarize in one line what the user is looking for, based on the "
    "conversation below. Mention only what they want.\n\nConversation:\n{conversation}"
)


class RemoteSummarizer:
    """Posts the serialized conversation to a JSON endpoint.

    Expects a ``{"text": "..."}`` response; retries are the caller's
    concern (a summary request is cheap to re-issue per conversation).
    """

    def __init__(self, endpoint: str, api_key: str = "", timeout: float = 30.0):
        self.endpoint = endpoint
        self.api_key = api_key
        self.timeout = timeout

    def summarize(self, conversation: Conversation) -> str:
        import requests

        serialized = "\n".join(
            f"Q: {t.question}\nA: {t.answer}" for t in conversation.turns
        )
        payload = {
            "task": "summarize_intent",
            "prompt": SUMMARY_PROMPT.format(conversation=serialized),
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            response = requests.post(
                self.endpoint, json=payload, headers=headers, timeout=self.timeout
            )
            response.raise_for_status()
            return str(response.json()["text"]).strip()
        except Exception as exc:
            raise RemoteClientError(f"summarizer endpoint {self.endpoint}: {exc}") from exc


def infer_query(conversation: Conversation, summarizer: Summarizer) -> str:
    """Single-line intent string for retrieval; failures carry turn context."""
    if not conversation.turns:
        raise ValueError("conversation has no turns")
    try:
        return summarizer.summarize(conversation)
    except (DataError, ValueError):
        raise
    except Exception as exc:
        raise RemoteClientError(
            f"summarizer failed on topic {conversation.topic_id!r} "
            f"(facet {conversation.facet_id!r}, {len(conversation.turns)} turns): {exc}"
        ) from exc


def load_topics(path: str | Path) -> dict[str, Topic]:
    topics: dict[str, Topic] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                topic = Topic(
                    topic_id=record["topic_id"],
                    query=record["query"],
                    facets=tuple(
                        Facet(f["facet_id"], f["description"])
                        for f in record["facets"]
                    ),
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from None
            if topic.topic_id in topics:
                raise DataError(f"{path}: line {lineno}: duplicate topic {topic.topic_id!r}")
            topics[topic.topic_id] = topic
    return topics


def load_conversations(
    path: str | Path, topics: Mapping[str, Topic] | None = None
) -> list[Conversation]:
    """Parse and validate a conversations file.

    When a topics registry is supplied, dangling topic or facet ids are
    rejected with the offending line number.
    """
    conversations = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                turns = tuple(
                    Turn(
                        question=t["question"],
                        answer=t["answer"],
                        image_refs=tuple(t.get("image_refs", ())),
                    )
                    for t in record["turns"]
                )
                conversation = Conversation(
                    topic_id=record["topic_id"],
                    facet_id=record["facet_id"],
                    turns=turns,
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from None
            except DataError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from None
            if topics is not None:
                if conversation.topic_id not in topics:
                    raise DataError(
                        f"{path}: line {lineno}: unknown topic {conversation.topic_id!r}"
                    )
                topics[conversation.topic_id].facet(conversation.facet_id)
            conversations.append(conversation)
    return conversations


def save_conversations(conversations: Iterable[Conversation], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for conv in conversations:
            fh.write(
                json.dumps(
                    {
                        "topic_id": conv.topic_id,
                        "facet_id": conv.facet_id,
                        "turns": [
                            {
                                "question": t.question,
                                "image_refs": list(t.image_refs),
                                "answer": t.answer,
                            }
                            for t in conv.turns
                        ],
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                )
                + "\n"
            )


@dataclass
class FeatureStore:
    """Image-id keyed feature vectors of one fixed dimension."""

    dim: int
    provenance: str = ""
    _features: dict[str, np.ndarray] = field(default_factory=dict)

    def get(self, image_id: str) -> np.ndarray:
        try:
            return self._features[image_id]
        except KeyError:
            raise DataError(f"image {image_id!r} is not in the feature store") from None

    def feature(self, image_id: str) -> ImageFeature:
        return ImageFeature(image_id, self.get(image_id), self.provenance)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._features

    def __len__(self) -> int:
        return len(self._features)


def load_feature_store(path: str | Path) -> FeatureStore:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("dim="):
            raise DataError(f"{path}: line 1: expected 'dim=<D>' header")
        try:
            dim = int(header[4:])
        except ValueError:
            raise DataError(f"{path}: line 1: bad dimension {header[4:]!r}") from None
        store = FeatureStore(dim=dim)
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                note = line.lstrip("# ").strip()
                if note:
                    store.provenance = note
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}: line {lineno}: expected 'id<TAB>values'")
            image_id, values = parts
            try:
                vector = np.array([float(v) for v in values.split(",")], dtype=np.float64)
            except ValueError:
                raise DataError(f"{path}: line {lineno}: unparseable vector") from None
            if vector.shape != (dim,):
                raise DataError(
                    f"{path}: line {lineno}: vector has {vector.size} entries, "
                    f"header says {dim}"
                )
            if not np.all(np.isfinite(vector)):
                raise DataError(f"{path}: line {lineno}: non-finite feature value")
            store._features[image_id] = vector
    return store


def save_feature_store(store: FeatureStore, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"dim={store.dim}\n")
        if store.provenance:
            fh.write(f"# {store.provenance}\n")
        for image_id in sorted(store._features):
            values = ",".join(repr(float(v)) for v in store._features[image_id])
            fh.write(f"{image_id}\t{values}\n")
