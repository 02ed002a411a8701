"""Document store, keyword-based identifier assignment, persistence.

Every document is named by exactly five lowercase keyword terms drawn
from its own text (title + body).  Identifier collisions are resolved by
swapping the fifth keyword for the document's next-ranked unused term;
once a document's vocabulary is exhausted, deterministic filler terms are
derived from a stable hash of its id.

File formats (UTF-8):

* corpus: JSON lines, one ``{"doc_id", "title", "body"}`` object per line
* manifest: a single JSON object ``{"format", "document_count",
  "vocabulary", "id_map"}`` where id_map stores the five keywords per
  document and token ids are rebuilt from the vocabulary on load

Token ids 0, 1, 2 are reserved for the sequence separator, end marker,
and unknown term; real terms start at 3.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from . import DataError
from .text import tokenize
from .yake import extract_keywords, ranked_terms

KEYWORDS_PER_DOC = 5

SEP_ID = 0
END_ID = 1
UNK_ID = 2
FIRST_TERM_ID = 3

MANIFEST_FORMAT = 1


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    body: str

    def __post_init__(self) -> None:
        if not self.doc_id:
            raise DataError("document id must be nonempty")
        if not self.body:
            raise DataError(f"document {self.doc_id!r} has an empty body")

    @property
    def text(self) -> str:
        return f"{self.title}\n{self.body}" if self.title else self.body


@dataclass(frozen=True)
class KeywordId:
    doc_id: str
    keywords: tuple[str, ...]
    tokens: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.keywords) != KEYWORDS_PER_DOC:
            raise ValueError(
                f"{self.doc_id}: expected {KEYWORDS_PER_DOC} keywords, "
                f"got {len(self.keywords)}"
            )


@dataclass
class CorpusManifest:
    document_count: int
    vocabulary: dict[str, int]
    id_map: dict[str, KeywordId]

    def keywords_for(self, doc_id: str) -> KeywordId:
        try:
            return self.id_map[doc_id]
        except KeyError:
            raise DataError(f"document {doc_id!r} is not in the manifest") from None

    def term_of(self, token_id: int) -> str:
        if not hasattr(self, "_reverse"):
            self._reverse = {i: t for t, i in self.vocabulary.items()}
        return self._reverse[token_id]


class Corpus:
    """Insertion-ordered document collection; single writer, then frozen."""

    def __init__(self) -> None:
        self._docs: dict[str, Document] = {}

    def add_document(self, doc: Document) -> None:
        if doc.doc_id in self._docs:
            raise DataError(f"duplicate document id {doc.doc_id!r}")
        self._docs[doc.doc_id] = doc

    def get(self, doc_id: str) -> Document:
        try:
            return self._docs[doc_id]
        except KeyError:
            raise DataError(f"no document with id {doc_id!r}") from None

    def __len__(self) -> int:
        return len(self._docs)

    def __iter__(self):
        return iter(self._docs.values())

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._docs


def _filler_terms(doc_id: str):
    """Endless deterministic lowercase terms tied to the document id."""
    counter = 0
    while True:
        digest = hashlib.sha1(f"{doc_id}:{counter}".encode("utf-8")).hexdigest()
        yield f"x{digest[:7]}"
        counter += 1


def _candidate_stream(doc: Document):
    """Ranked keyword candidates, then leftover unigrams, then fillers."""
    try:
        ranked = ranked_terms(doc.text)
    except ValueError:
        ranked = []  # all-stopword document
    yield from ranked
    counts: dict[str, int] = {}
    for token in tokenize(doc.text):
        counts[token] = counts.get(token, 0) + 1
    seen = set(ranked)
    for term in sorted((t for t in counts if t not in seen), key=lambda t: (-counts[t], t)):
        yield term
    yield from _filler_terms(doc.doc_id)


def assign_keyword_ids(corpus: Corpus) -> CorpusManifest:
    """Give every document a unique five-keyword identifier.

    Documents are processed in insertion order; the first document to
    claim a keyword set keeps it, later collisions swap their fifth slot.
    """
    if len(corpus) == 0:
        raise DataError("cannot assign keyword ids to an empty corpus")

    taken: set[tuple[str, ...]] = set()
    keyword_lists: dict[str, tuple[str, ...]] = {}
    for doc in corpus:
        try:
            keywords = extract_keywords(doc.text, KEYWORDS_PER_DOC)
        except ValueError:
            keywords = []  # all-stopword document, fall through to spares
        picked = set(keywords)
        candidates = _candidate_stream(doc)

        def take_unused() -> str:
            for term in candidates:
                if term not in picked:
                    picked.add(term)
                    return term
            raise AssertionError("filler stream is endless")  # pragma: no cover

        while len(keywords) < KEYWORDS_PER_DOC:
            keywords.append(take_unused())
        while tuple(keywords) in taken:
            keywords[KEYWORDS_PER_DOC - 1] = take_unused()
        taken.add(tuple(keywords))
        keyword_lists[doc.doc_id] = tuple(keywords)

    vocabulary = {
        term: FIRST_TERM_ID + i
        for i, term in enumerate(sorted({t for kws in keyword_lists.values() for t in kws}))
    }
    id_map = {
        doc_id: KeywordId(
            doc_id=doc_id,
            keywords=kws,
            tokens=tuple(vocabulary[t] for t in kws),
        )
        for doc_id, kws in keyword_lists.items()
    }
    return CorpusManifest(
        document_count=len(corpus), vocabulary=vocabulary, id_map=id_map
    )


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in corpus:
            fh.write(
                json.dumps(
                    {"doc_id": doc.doc_id, "title": doc.title, "body": doc.body},
                    ensure_ascii=False,
                    sort_keys=True,
                )
                + "\n"
            )


def load_corpus(path: str | Path) -> Corpus:
    corpus = Corpus()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                doc = Document(
                    doc_id=record["doc_id"],
                    title=record.get("title", ""),
                    body=record["body"],
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from None
            corpus.add_document(doc)
    if len(corpus) == 0:
        raise DataError(f"{path}: corpus file contains no documents")
    return corpus


def save_manifest(manifest: CorpusManifest, path: str | Path) -> None:
    payload = {
        "format": MANIFEST_FORMAT,
        "document_count": manifest.document_count,
        "vocabulary": manifest.vocabulary,
        "id_map": {
            doc_id: list(kid.keywords) for doc_id, kid in manifest.id_map.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False, sort_keys=True, indent=0)
        fh.write("\n")


def load_manifest(path: str | Path) -> CorpusManifest:
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    try:
        if payload["format"] != MANIFEST_FORMAT:
            raise DataError(f"{path}: unsupported manifest format {payload['format']}")
        vocabulary = {str(t): int(i) for t, i in payload["vocabulary"].items()}
        id_map = {}
        for doc_id, keywords in payload["id_map"].items():
            id_map[doc_id] = KeywordId(
                doc_id=doc_id,
                keywords=tuple(keywords),
                tokens=tuple(vocabulary[t] for t in keywords),
            )
        manifest = CorpusManifest(
            document_count=int(payload["document_count"]),
            vocabulary=vocabulary,
            id_map=id_map,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed manifest: {exc}") from None
    if manifest.document_count != len(manifest.id_map):
        raise DataError(f"{path}: id_map does not cover every document")
    return manifest
