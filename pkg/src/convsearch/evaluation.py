"""Retrieval metrics and TREC-format run/qrels interchange.

Metric conventions: a document counts as relevant when its grade is
strictly positive (negative grades are clamped to zero when qrels are
read, with a count of clamped entries kept); nDCG uses linear gain and a
``log2(rank + 1)`` discount; topics judged in the qrels but missing from
a run score zero rather than being skipped.

Formats: qrels lines are ``topic iteration doc grade`` (whitespace
separated); run lines are the six-column ``topic Q0 doc rank score tag``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from . import DataError

METRIC_NAMES = ("mrr", "p@1", "p@3", "p@5", "ndcg@1", "ndcg@3", "ndcg@5")


@dataclass
class Qrels:
    """Relevance grades keyed topic -> doc -> grade, all grades >= 0."""

    grades: dict[str, dict[str, int]] = field(default_factory=dict)
    clamped_negatives: int = 0
    relevance_threshold: int = 1

    def grade(self, topic_id: str, doc_id: str) -> int:
        return self.grades.get(topic_id, {}).get(doc_id, 0)

    def relevant(self, topic_id: str, doc_id: str) -> bool:
        return self.grade(topic_id, doc_id) >= self.relevance_threshold

    @property
    def topics(self) -> list[str]:
        return sorted(self.grades)


@dataclass
class Run:
    """Per-topic rankings with a tag; scores non-increasing per topic."""

    tag: str
    rankings: dict[str, list[tuple[str, float]]] = field(default_factory=dict)

    def add_topic(self, topic_id: str, ranking: Sequence[tuple[str, float]]) -> None:
        docs = [d for d, _ in ranking]
        if len(set(docs)) != len(docs):
            raise DataError(f"run {self.tag!r} topic {topic_id!r}: duplicate doc ids")
        scores = [s for _, s in ranking]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise DataError(
                f"run {self.tag!r} topic {topic_id!r}: scores must be non-increasing"
            )
        if topic_id in self.rankings:
            raise DataError(f"run {self.tag!r}: duplicate topic {topic_id!r}")
        self.rankings[topic_id] = list(ranking)

    @property
    def topics(self) -> list[str]:
        return sorted(self.rankings)


def _check_run(run: Run, qrels: Qrels) -> None:
    if not run.rankings:
        raise DataError(f"run {run.tag!r} is empty")
    extra = set(run.rankings) - set(qrels.grades)
    if extra:
        raise DataError(
            f"run {run.tag!r} has topics without judgments: {sorted(extra)}"
        )


def mrr(run: Run, qrels: Qrels) -> float:
    """Mean over judged topics of 1/rank of the first relevant document."""
    _check_run(run, qrels)
    total = 0.0
    for topic_id in qrels.topics:
        for rank, (doc_id, _) in enumerate(run.rankings.get(topic_id, []), start=1):
            if qrels.relevant(topic_id, doc_id):
                total += 1.0 / rank
                break
    return total / len(qrels.topics)


def precision_at(run: Run, qrels: Qrels, k: int) -> float:
    """Mean fraction of relevant documents in the top k; short rankings
    count their missing slots as non-relevant."""
    if k < 1:
        raise ValueError("k must be >= 1")
    _check_run(run, qrels)
    total = 0.0
    for topic_id in qrels.topics:
        top = run.rankings.get(topic_id, [])[:k]
        hits = sum(1 for doc_id, _ in top if qrels.relevant(topic_id, doc_id))
        total += hits / k
    return total / len(qrels.topics)


def ndcg_at(run: Run, qrels: Qrels, k: int) -> float:
    """Linear-gain nDCG; topics whose ideal DCG is zero contribute zero."""
    if k < 1:
        raise ValueError("k must be >= 1")
    _check_run(run, qrels)
    total = 0.0
    for topic_id in qrels.topics:
        judged = sorted(qrels.grades[topic_id].values(), reverse=True)
        ideal = sum(g / math.log2(i + 2) for i, g in enumerate(judged[:k]))
        if ideal == 0:
            continue
        top = run.rankings.get(topic_id, [])[:k]
        dcg = sum(
            qrels.grade(topic_id, doc_id) / math.log2(rank + 2)
            for rank, (doc_id, _) in enumerate(top)
        )
        total += dcg / ideal
    return total / len(qrels.topics)


@dataclass
class MetricsReport:
    tag: str
    per_topic: dict[str, dict[str, float]]
    mean: dict[str, float]


def compute_metrics(run: Run, qrels: Qrels) -> MetricsReport:
    """All metrics at once, per topic and averaged."""
    _check_run(run, qrels)
    per_topic: dict[str, dict[str, float]] = {}
    for topic_id in qrels.topics:
        single = Qrels(grades={topic_id: qrels.grades[topic_id]},
                       relevance_threshold=qrels.relevance_threshold)
        view = Run(tag=run.tag)
        if topic_id in run.rankings:
            view.rankings[topic_id] = run.rankings[topic_id]
        else:
            view.rankings[topic_id] = []
        per_topic[topic_id] = {
            "mrr": mrr(view, single),
            "p@1": precision_at(view, single, 1),
            "p@3": precision_at(view, single, 3),
            "p@5": precision_at(view, single, 5),
            "ndcg@1": ndcg_at(view, single, 1),
            "ndcg@3": ndcg_at(view, single, 3),
            "ndcg@5": ndcg_at(view, single, 5),
        }
    mean = {
        name: sum(row[name] for row in per_topic.values()) / len(per_topic)
        for name in METRIC_NAMES
    }
    return MetricsReport(tag=run.tag, per_topic=per_topic, mean=mean)


def compare_runs(baseline: Run, system: Run, qrels: Qrels) -> dict[str, dict[str, float | None]]:
    """Per-metric absolute and relative deltas between two runs.

    The relative delta is ``(system - baseline) / baseline``, reported as
    None when the baseline value is zero.
    """
    missing = set(baseline.rankings) ^ set(system.rankings)
    if missing:
        raise DataError(f"runs cover different topics: {sorted(missing)}")
    base_report = compute_metrics(baseline, qrels)
    sys_report = compute_metrics(system, qrels)
    deltas: dict[str, dict[str, float | None]] = {}
    for name in METRIC_NAMES:
        b = base_report.mean[name]
        s = sys_report.mean[name]
        deltas[name] = {
            "baseline": b,
            "system": s,
            "absolute": s - b,
            "relative": (s - b) / b if b != 0 else None,
        }
    return deltas


def read_qrels(path: str | Path, relevance_threshold: int = 1) -> Qrels:
    qrels = Qrels(relevance_threshold=relevance_threshold)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 4:
                raise DataError(
                    f"{path}: line {lineno}: expected 'topic iteration doc grade'"
                )
            topic_id, _, doc_id, grade_text = parts
            try:
                grade = int(grade_text)
            except ValueError:
                raise DataError(f"{path}: line {lineno}: bad grade {grade_text!r}") from None
            if doc_id in qrels.grades.get(topic_id, {}):
                raise DataError(
                    f"{path}: line {lineno}: duplicate pair ({topic_id}, {doc_id})"
                )
            if grade < 0:
                grade = 0
                qrels.clamped_negatives += 1
            qrels.grades.setdefault(topic_id, {})[doc_id] = grade
    if not qrels.grades:
        raise DataError(f"{path}: no judgments found")
    return qrels


def write_run(path: str | Path, run: Run) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for topic_id in sorted(run.rankings):
            for rank, (doc_id, score) in enumerate(run.rankings[topic_id], start=1):
                fh.write(f"{topic_id} Q0 {doc_id} {rank} {score!r} {run.tag}\n")


def read_run(path: str | Path) -> Run:
    rows: dict[str, list[tuple[int, str, float]]] = {}
    tag = ""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 6 or parts[1] != "Q0":
                raise DataError(
                    f"{path}: line {lineno}: expected 'topic Q0 doc rank score tag'"
                )
            topic_id, _, doc_id, rank_text, score_text, tag = parts
            try:
                rows.setdefault(topic_id, []).append(
                    (int(rank_text), doc_id, float(score_text))
                )
            except ValueError:
                raise DataError(f"{path}: line {lineno}: bad rank or score") from None
    if not rows:
        raise DataError(f"{path}: no run entries found")
    run = Run(tag=tag)
    for topic_id, entries in rows.items():
        entries.sort()
        run.add_topic(topic_id, [(doc_id, score) for _, doc_id, score in entries])
    return run


def metrics_to_json(report: MetricsReport) -> str:
    payload = {"tag": report.tag, "mean": report.mean, "per_topic": report.per_topic}
    return json.dumps(payload, sort_keys=True, indent=2)


def format_metrics_table(report: MetricsReport) -> str:
    """Aligned-column text table of the mean metrics."""
    header = ["metric"] + list(METRIC_NAMES)
    values = [report.tag] + [f"{report.mean[m]:.4f}" for m in METRIC_NAMES]
    widths = [max(len(h), len(v)) for h, v in zip(header, values)]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(header, widths)),
        "  ".join(v.ljust(w) for v, w in zip(values, widths)),
    ]
    return "\n".join(lines)


def format_comparison_table(deltas: Mapping[str, Mapping[str, float | None]]) -> str:
    lines = [
        f"{'metric':8s}  {'baseline':>10s}  {'system':>10s}  {'abs':>9s}  {'rel%':>8s}"
    ]
    for name in METRIC_NAMES:
        row = deltas[name]
        rel = row["relative"]
        rel_text = f"{rel * 100:+.2f}" if rel is not None else "n/a"
        lines.append(
            f"{name:8s}  {row['baseline']:>10.4f}  {row['system']:>10.4f}  "
            f"{row['absolute']:>+9.4f}  {rel_text:>8s}"
        )
    return "\n".join(lines)
