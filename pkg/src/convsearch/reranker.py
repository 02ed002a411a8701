"""Losses and training for the generative re-ranker.

The language-modeling loss of a target identifier sequence is the sum of
negative log-probabilities under the trie-masked softmax, exactly the
masking used at decode time.  Ranking supervision combines a margin
hinge between the positive and negative sequence losses with the
positive sequence loss itself:

    rank = max(0, margin + l_pos - l_neg)
    total = l_pos + lambda_rank * rank

``l_pos``/``l_neg`` entering the combination are per-token averages so
the margin stays comparable across target lengths; ``lm_loss`` itself
reports the plain sum.  Training is plain SGD, deterministic under a
fixed seed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import END_ID, SEP_ID, UNK_ID, CorpusManifest
from .decoder import DecodingTrie, allowed_tokens, build_trie, masked_step
from .index import CandidateSet
from .scorer import (
    FusionParameters,
    ScorerContext,
    TrainableScorer,
    apply_gradients,
    init_parameters,
    zero_gradients,
)
from .text import tokenize


@dataclass(frozen=True)
class TrainingExample:
    example_id: str
    context: ScorerContext
    positive_target: tuple[int, ...]
    negative_target: tuple[int, ...]
    trie: DecodingTrie

    def __post_init__(self) -> None:
        if not self.positive_target or not self.negative_target:
            raise ValueError(f"{self.example_id}: empty target sequence")


@dataclass
class LossConfig:
    margin: float = 2.0
    lambda_rank: float = 0.75
    learning_rate: float = 1e-4
    batch_size: int = 2

    def __post_init__(self) -> None:
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.lambda_rank < 0:
            raise ValueError("lambda_rank must be non-negative")


def rank_loss(l_pos: float, l_neg: float, margin: float) -> float:
    """Margin hinge pushing the positive loss below the negative one."""
    if not (math.isfinite(l_pos) and math.isfinite(l_neg)):
        raise ValueError("rank_loss needs finite inputs")
    return max(0.0, margin + l_pos - l_neg)


def combined_loss(l_pos: float, l_neg: float, config: LossConfig) -> float:
    """Total objective at the formula level, given the two LM losses."""
    return l_pos + config.lambda_rank * rank_loss(l_pos, l_neg, config.margin)


def lm_loss(scorer, context: ScorerContext, target: Sequence[int], trie: DecodingTrie) -> float:
    """Sum of -log P(token) under trie-masked softmax, any scorer."""
    if not target:
        raise ValueError("target must be nonempty")
    total = 0.0
    prefix: tuple[int, ...] = ()
    for step, token in enumerate(target):
        allowed = allowed_tokens(trie, prefix)
        if token not in allowed:
            raise ValueError(
                f"malformed example: target token {token} not allowed at step {step}"
            )
        probs = masked_step(scorer.score_next(context, prefix), allowed)
        with np.errstate(divide="ignore"):
            total -= float(np.log(probs[token]))
        prefix += (token,)
    return total


def _masked_lm_forward(
    scorer: TrainableScorer,
    context: ScorerContext,
    target: Sequence[int],
    trie: DecodingTrie,
):
    """One batched forward pass; returns (sum loss, d_logits, cache)."""
    logits, cache = scorer.forward(context, list(target[:-1]))
    base = len(cache["img_vecs"]) + len(context.text_tokens) - 1
    d_logits = np.zeros_like(logits)
    total = 0.0
    prefix: tuple[int, ...] = ()
    for step, token in enumerate(target):
        allowed = allowed_tokens(trie, prefix)
        if token not in allowed:
            raise ValueError(
                f"malformed example: target token {token} not allowed at step {step}"
            )
        probs = masked_step(logits[base + step], allowed)
        with np.errstate(divide="ignore"):
            total -= float(np.log(probs[token]))
        row = probs.copy()
        row[token] -= 1.0
        d_logits[base + step] += row
        prefix += (token,)
    return total, d_logits, cache


def total_loss(example: TrainingExample, scorer, config: LossConfig) -> float:
    """Objective value for one example (works with any scorer)."""
    l_pos = lm_loss(scorer, example.context, example.positive_target, example.trie)
    l_neg = lm_loss(scorer, example.context, example.negative_target, example.trie)
    return combined_loss(
        l_pos / len(example.positive_target),
        l_neg / len(example.negative_target),
        config,
    )


def total_loss_and_grads(
    example: TrainingExample, scorer: TrainableScorer, config: LossConfig
) -> tuple[float, dict[str, np.ndarray]]:
    """Objective value and analytic parameter gradients."""
    t_pos = len(example.positive_target)
    t_neg = len(example.negative_target)
    sum_pos, d_log_pos, cache_pos = _masked_lm_forward(
        scorer, example.context, example.positive_target, example.trie
    )
    sum_neg, d_log_neg, cache_neg = _masked_lm_forward(
        scorer, example.context, example.negative_target, example.trie
    )
    l_pos = sum_pos / t_pos
    l_neg = sum_neg / t_neg
    hinge_active = (config.margin + l_pos - l_neg) > 0
    loss = combined_loss(l_pos, l_neg, config)
    coef_pos = (1.0 + (config.lambda_rank if hinge_active else 0.0)) / t_pos
    coef_neg = (-config.lambda_rank if hinge_active else 0.0) / t_neg
    grads = scorer.backward(cache_pos, coef_pos * d_log_pos)
    if coef_neg != 0.0:
        for name, arr in scorer.backward(cache_neg, coef_neg * d_log_neg).items():
            grads[name] += arr
    return loss, grads


def build_context(
    topic_query: str,
    inferred_query: str,
    manifest: CorpusManifest,
    image_vectors: Sequence[np.ndarray] = (),
) -> ScorerContext:
    """Token ids for topic text + inferred query; OOV terms map to UNK."""
    terms = tokenize(topic_query) + tokenize(inferred_query)
    tokens = tuple(manifest.vocabulary.get(t, UNK_ID) for t in terms)
    return ScorerContext(text_tokens=tokens, image_vectors=tuple(image_vectors))


def target_tokens(doc_ids: Sequence[str], manifest: CorpusManifest) -> tuple[int, ...]:
    """Identifier sequences joined by the separator, closed with END."""
    tokens: list[int] = []
    for i, doc_id in enumerate(doc_ids):
        if i:
            tokens.append(SEP_ID)
        tokens.extend(manifest.id_map[doc_id].tokens)
    tokens.append(END_ID)
    return tuple(tokens)


def build_training_set(
    keys: Sequence[str],
    candidate_sets: Sequence[CandidateSet],
    contexts: Sequence[ScorerContext],
    qrels: Mapping[str, Mapping[str, int]],
    manifest: CorpusManifest,
) -> tuple[list[TrainingExample], dict[str, int]]:
    """Pair each candidate set with positive/negative identifier targets.

    ``qrels`` maps topic -> doc -> grade.  Positives are candidates with
    a grade above zero, negatives the rest, both kept in first-phase rank
    order.  Topics lacking either side are skipped and counted.
    """
    examples: list[TrainingExample] = []
    report = {"built": 0, "skipped_no_positive": 0, "skipped_no_negative": 0}
    for key, candidates, context in zip(keys, candidate_sets, contexts):
        judged = qrels.get(candidates.topic_id, {})
        positives = [d for d in candidates.doc_ids if judged.get(d, 0) > 0]
        negatives = [d for d in candidates.doc_ids if judged.get(d, 0) <= 0]
        if not positives:
            report["skipped_no_positive"] += 1
            continue
        if not negatives:
            report["skipped_no_negative"] += 1
            continue
        examples.append(
            TrainingExample(
                example_id=key,
                context=context,
                positive_target=target_tokens(positives, manifest),
                negative_target=target_tokens(negatives, manifest),
                trie=build_trie(candidates, manifest),
            )
        )
        report["built"] += 1
    return examples, report


def train(
    examples: Sequence[TrainingExample],
    config: LossConfig,
    epochs: int,
    seed: int,
    *,
    n_vocab: int,
    d_img: int,
    d_model: int = 64,
    vocab_hash: str = "",
    params: FusionParameters | None = None,
) -> tuple[FusionParameters, list[float]]:
    """SGD over the combined objective; returns per-epoch mean losses."""
    if not examples:
        raise ValueError("cannot train on an empty example list")
    if params is None:
        params = init_parameters(
            n_vocab=n_vocab, d_img=d_img, d_model=d_model, seed=seed,
            vocab_hash=vocab_hash,
        )
    else:
        params = params.copy()
    scorer = TrainableScorer(params)
    rng = np.random.default_rng(seed)
    curve: list[float] = []
    for _ in range(epochs):
        order = rng.permutation(len(examples))
        epoch_losses: list[float] = []
        for start in range(0, len(order), config.batch_size):
            batch = [examples[i] for i in order[start : start + config.batch_size]]
            batch_grads = zero_gradients(params)
            for example in batch:
                loss, grads = total_loss_and_grads(example, scorer, config)
                if not math.isfinite(loss):
                    raise RuntimeError(
                        f"non-finite loss on example {example.example_id!r}"
                    )
                epoch_losses.append(loss)
                for name in batch_grads:
                    batch_grads[name] += grads[name] / len(batch)
            apply_gradients(params, batch_grads, config.learning_rate)
        curve.append(float(np.mean(epoch_losses)))
    return params, curve


def save_loss_curve(curve: Sequence[float], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss"])
        for epoch, loss in enumerate(curve, start=1):
            writer.writerow([epoch, repr(float(loss))])
