"""Shared text normalization, tokenization, and the packaged stopword list.

Every module tokenizes through here so that corpus keywords, BM25 query
terms, and conversation terms live in one token space.  Rules:

* Unicode NFC normalization, control characters stripped.
* Apostrophes between letters are elided ("don't" -> "dont") so
  contractions survive as single tokens.
* Everything else that is not alphanumeric splits tokens.
* Tokens are lowercased unless case is explicitly preserved (the keyword
  extractor needs original casing for its statistics).
"""

from __future__ import annotations

import importlib.resources
import re
import unicodedata

STOPWORDS_FILE = "stopwords_en_v1.txt"

_APOSTROPHES = re.compile(r"(?<=\w)[''](?=\w)")
_CONTROL = re.compile(r"[\x00-\x08\x0b\x0c\x0e-\x1f\x7f]")
_TOKEN = re.compile(r"\w+", re.UNICODE)
_SENTENCE_END = re.compile(r"(?<=[.!?])\s+")


def normalize(text: str) -> str:
    """NFC-normalize and strip control characters (newlines/tabs kept)."""
    return _CONTROL.sub("", unicodedata.normalize("NFC", text))


def tokenize(text: str, lowercase: bool = True) -> list[str]:
    """Split normalized text into word tokens.

    Underscore counts as punctuation; digits are kept as token characters.
    """
    cleaned = _APOSTROPHES.sub("", normalize(text)).replace("_", " ")
    tokens = _TOKEN.findall(cleaned)
    if lowercase:
        tokens = [t.lower() for t in tokens]
    return tokens


def split_sentences(text: str) -> list[str]:
    """Split on terminal punctuation followed by whitespace; never empty
    for nonempty input."""
    parts = [p.strip() for p in _SENTENCE_END.split(normalize(text))]
    return [p for p in parts if p]


def load_stopwords() -> frozenset[str]:
    """The packaged 150-word list; shared by keyword extraction and the
    default intent summarizer."""
    data = (
        importlib.resources.files("convsearch.data")
        .joinpath(STOPWORDS_FILE)
        .read_text(encoding="utf-8")
    )
    return frozenset(data.split())


STOPWORDS = load_stopwords()

# Negation markers get special treatment in answer classification: they are
# in the stopword list but still decide polarity.
NEGATIONS = frozenset({"no", "not", "never", "dont", "doesnt"})
