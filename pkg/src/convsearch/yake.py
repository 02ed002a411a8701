"""Unsupervised single-document keyword scoring over unigrams.

Five statistical features are combined into a per-term score where LOWER
means more keyword-like.  Definitions (window size 1, unigrams only):

casing      max(acronym count, proper-noun count) / (1 + ln tf)
            An occurrence counts as acronym when the raw token is all
            uppercase and longer than one character; as proper noun when
            only its first letter is uppercase and it is not sentence
            initial.
position    ln(ln(3 + median of the distinct 0-based sentence indices
            containing the term))
frequency   tf / (mean + population std of tf over non-stopword terms)
relatedness 1 + (DL + DR) * tf / max_tf, where DL is the number of
            distinct terms adjacent on the left divided by the total
            count of left adjacencies (0 when the term never has a left
            neighbour), DR symmetrically on the right.  Adjacency is
            window-1 within a sentence and includes stopword neighbours;
            max_tf ranges over all terms including stopwords.
dispersion  number of distinct sentences containing the term / total
            sentence count

score = (relatedness * position) /
        (casing + frequency / relatedness + dispersion / relatedness)

Candidates are non-stopword terms ordered by ascending score, ties broken
by first occurrence then lexicographically.  Scoring is a pure function
of the text.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import median, pstdev

from .text import STOPWORDS, split_sentences, tokenize


@dataclass
class TermStats:
    """Per-term feature row, exposed so tests can audit the arithmetic."""

    term: str
    tf: int
    casing: float
    position: float
    frequency: float
    relatedness: float
    dispersion: float
    score: float
    first_seen: int


def term_feature_table(text: str) -> dict[str, TermStats]:
    """Compute the full feature table for every non-stopword term."""
    sentences = split_sentences(text)
    if not sentences:
        raise ValueError("cannot extract keywords from empty text")

    # occurrence stream: (lower term, sentence idx, idx in sentence, raw token)
    occurrences: list[tuple[str, int, int, str]] = []
    for s_idx, sentence in enumerate(sentences):
        raw_tokens = tokenize(sentence, lowercase=False)
        for t_idx, raw in enumerate(raw_tokens):
            occurrences.append((raw.lower(), s_idx, t_idx, raw))

    tf: dict[str, int] = {}
    tf_acronym: dict[str, int] = {}
    tf_proper: dict[str, int] = {}
    term_sentences: dict[str, set[int]] = {}
    first_seen: dict[str, int] = {}
    left_neighbors: dict[str, list[str]] = {}
    right_neighbors: dict[str, list[str]] = {}

    for pos, (term, s_idx, t_idx, raw) in enumerate(occurrences):
        tf[term] = tf.get(term, 0) + 1
        first_seen.setdefault(term, pos)
        term_sentences.setdefault(term, set()).add(s_idx)
        if raw.isupper() and len(raw) > 1:
            tf_acronym[term] = tf_acronym.get(term, 0) + 1
        elif raw[:1].isupper() and t_idx > 0:
            tf_proper[term] = tf_proper.get(term, 0) + 1
        if pos > 0:
            prev_term, prev_s, _, _ = occurrences[pos - 1]
            if prev_s == s_idx:
                left_neighbors.setdefault(term, []).append(prev_term)
                right_neighbors.setdefault(prev_term, []).append(term)

    max_tf = max(tf.values())
    content_tfs = [count for term, count in tf.items() if term not in STOPWORDS]
    if not content_tfs:
        raise ValueError("text contains no candidate terms")
    mean_tf = sum(content_tfs) / len(content_tfs)
    std_tf = pstdev(content_tfs)

    table: dict[str, TermStats] = {}
    for term, count in tf.items():
        if term in STOPWORDS:
            continue
        casing = max(tf_acronym.get(term, 0), tf_proper.get(term, 0)) / (
            1.0 + math.log(count)
        )
        position = math.log(math.log(3.0 + median(sorted(term_sentences[term]))))
        frequency = count / (mean_tf + std_tf)
        lefts = left_neighbors.get(term, [])
        rights = right_neighbors.get(term, [])
        dl = len(set(lefts)) / len(lefts) if lefts else 0.0
        dr = len(set(rights)) / len(rights) if rights else 0.0
        relatedness = 1.0 + (dl + dr) * count / max_tf
        dispersion = len(term_sentences[term]) / len(sentences)
        score = (relatedness * position) / (
            casing + frequency / relatedness + dispersion / relatedness
        )
        table[term] = TermStats(
            term=term,
            tf=count,
            casing=casing,
            position=position,
            frequency=frequency,
            relatedness=relatedness,
            dispersion=dispersion,
            score=score,
            first_seen=first_seen[term],
        )
    return table


def ranked_terms(text: str) -> list[str]:
    """All candidate terms, best (lowest score) first."""
    table = term_feature_table(text)
    return sorted(table, key=lambda t: (table[t].score, table[t].first_seen, t))


def extract_keywords(text: str, n: int) -> list[str]:
    """Top-``n`` keyword terms for a document.

    When fewer than ``n`` candidates exist the result is padded with the
    remaining (stopword) unigrams by descending frequency; with no
    candidates at all this raises.  The result can still be shorter than
    ``n`` when the text simply has too few distinct tokens.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    candidates = ranked_terms(text)
    if len(candidates) >= n:
        return candidates[:n]

    counts: dict[str, int] = {}
    for token in tokenize(text):
        counts[token] = counts.get(token, 0) + 1
    leftovers = sorted(
        (t for t in counts if t not in candidates),
        key=lambda t: (-counts[t], t),
    )
    return (candidates + leftovers)[:n]
