"""Command-line entry point.

Subcommands: index, forge, split, train, pipeline, eval, compare.  Bare
invocations use the published defaults (top-100 first phase, 10 beams,
margin 2.0, rank weight 0.75, learning rate 1e-4, batch size 2).

Exit codes: 0 success, 1 usage error, 2 data error, 3 remote-client
error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import DataError, RemoteClientError, __version__

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_REMOTE = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="convsearch", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("index", help="build keyword-id manifest and BM25 index")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("forge", help="build multi-turn conversations from a QA pool")
    p.add_argument("--pool", required=True)
    p.add_argument("--topics", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stats", required=True)
    p.add_argument("--targets", default="2,3,4")
    p.add_argument("--sample-size", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--judge", choices=("stub", "remote"), default="stub")

    p = sub.add_parser("split", help="facet-level train/validation/test split")
    p.add_argument("--conversations", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ratios", default="0.8,0.1,0.1")

    p = sub.add_parser("train", help="train the re-ranking scorer")
    p.add_argument("--conversations", required=True)
    p.add_argument("--topics", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--features")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--loss-curve")
    p.add_argument("--modality", choices=("multi", "text"), default="multi")
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--margin", type=float, default=2.0)
    p.add_argument("--lambda-rank", type=float, default=0.75)
    p.add_argument("--batch-size", type=int, default=2)
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("pipeline", help="retrieve (and optionally re-rank) a run")
    p.add_argument("--conversations", required=True)
    p.add_argument("--topics", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--manifest")
    p.add_argument("--mode", choices=("bm25-only", "rerank"), default="bm25-only")
    p.add_argument("--scorer", choices=("trained", "lexical"), default="trained")
    p.add_argument("--checkpoint")
    p.add_argument("--features")
    p.add_argument("--modality", choices=("multi", "text"), default="multi")
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--beams", type=int, default=10)
    p.add_argument("--max-docs", type=int, default=10)
    p.add_argument("--tag", default="convsearch")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="score a run against qrels")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--threshold", type=int, default=1)
    p.add_argument("--out")

    p = sub.add_parser("compare", help="delta report between two runs")
    p.add_argument("--baseline", required=True)
    p.add_argument("--system", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--out")
    return parser


def cmd_index(args) -> int:
    from .corpus import assign_keyword_ids, load_corpus, save_manifest
    from .index import build_index, save_index

    corpus = load_corpus(args.corpus)
    manifest = assign_keyword_ids(corpus)
    index = build_index(corpus)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_manifest(manifest, out_dir / "manifest.json")
    save_index(index, out_dir / "index.bin")
    print(f"indexed {len(corpus)} documents -> {out_dir}/manifest.json, {out_dir}/index.bin")
    return EXIT_OK


def cmd_forge(args) -> int:
    from .conversation import load_topics, save_conversations
    from .forge import ForgeConfig, RemoteJudge, StubJudge, load_qa_pool, run_pipeline

    pool = load_qa_pool(args.pool)
    topics = load_topics(args.topics)
    targets = tuple(int(t) for t in args.targets.split(","))
    config = ForgeConfig(
        turn_targets=targets, sample_size=args.sample_size, seed=args.seed
    )
    judge = StubJudge() if args.judge == "stub" else RemoteJudge()
    conversations, stats = run_pipeline(pool, topics, config, judge)
    save_conversations(conversations, args.out)
    Path(args.stats).write_text(stats.to_json() + "\n", encoding="utf-8")
    print(f"forged {stats.output_total} conversations -> {args.out}")
    return EXIT_OK


def cmd_split(args) -> int:
    from .conversation import load_conversations, save_conversations
    from .pipeline import split_facets

    ratios = tuple(float(r) for r in args.ratios.split(","))
    if len(ratios) != 3:
        raise DataError("--ratios needs three comma-separated numbers")
    conversations = load_conversations(args.conversations)
    train, val, test = split_facets(conversations, seed=args.seed, ratios=ratios)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", train), ("validation", val), ("test", test)):
        save_conversations(part, out_dir / f"{name}.jsonl")
    print(
        f"split {len(conversations)} conversations -> "
        f"train {len(train)} / validation {len(val)} / test {len(test)}"
    )
    return EXIT_OK


def _load_common(args):
    from .conversation import load_conversations, load_topics
    from .index import load_index

    topics = load_topics(args.topics)
    conversations = load_conversations(args.conversations, topics)
    index = load_index(args.index)
    return topics, conversations, index


def cmd_train(args) -> int:
    from .conversation import DefaultSummarizer, infer_query, load_feature_store
    from .corpus import load_manifest
    from .evaluation import read_qrels
    from .index import retrieve
    from .reranker import (
        LossConfig,
        build_context,
        build_training_set,
        save_loss_curve,
        train,
    )
    from .scorer import save_checkpoint, vocab_hash, vocab_size

    topics, conversations, index = _load_common(args)
    manifest = load_manifest(args.manifest)
    qrels = read_qrels(args.qrels)
    store = None
    if args.modality == "multi":
        if not args.features:
            raise DataError("--modality multi needs --features")
        store = load_feature_store(args.features)
    summarizer = DefaultSummarizer(topics)

    keys, candidate_sets, contexts = [], [], []
    grades: dict[str, dict[str, int]] = {}
    for conversation in conversations:
        key = f"{conversation.topic_id}#{conversation.facet_id}"
        topic_query = topics[conversation.topic_id].query
        inferred = infer_query(conversation, summarizer)
        candidates = retrieve(index, topic_query, inferred, k=args.k, topic_id=key)
        vectors = ()
        if store is not None:
            vectors = tuple(store.get(ref) for ref in conversation.image_refs)
        keys.append(key)
        candidate_sets.append(candidates)
        contexts.append(build_context(topic_query, inferred, manifest, vectors))
        grades[key] = qrels.grades.get(key, qrels.grades.get(conversation.topic_id, {}))

    examples, report = build_training_set(
        keys, candidate_sets, contexts, grades, manifest
    )
    if not examples:
        raise DataError(f"no usable training examples (report: {report})")
    config = LossConfig(
        margin=args.margin,
        lambda_rank=args.lambda_rank,
        learning_rate=args.lr,
        batch_size=args.batch_size,
    )
    d_img = store.dim if store is not None else 1
    params, curve = train(
        examples,
        config,
        epochs=args.epochs,
        seed=args.seed,
        n_vocab=vocab_size(manifest),
        d_img=d_img,
        d_model=args.d_model,
        vocab_hash=vocab_hash(manifest),
    )
    save_checkpoint(params, args.checkpoint)
    if args.loss_curve:
        save_loss_curve(curve, args.loss_curve)
    print(
        f"trained on {report['built']} examples for {args.epochs} epochs; "
        f"loss {curve[0]:.4f} -> {curve[-1]:.4f}; checkpoint -> {args.checkpoint}"
    )
    return EXIT_OK


def cmd_pipeline(args) -> int:
    from .conversation import load_feature_store
    from .corpus import load_manifest
    from .evaluation import write_run
    from .pipeline import run_retrieval
    from .scorer import (
        LexicalOverlapScorer,
        TrainableScorer,
        load_checkpoint,
        vocab_hash,
        vocab_size,
    )

    topics, conversations, index = _load_common(args)
    manifest = scorer = store = None
    if args.mode == "rerank":
        if not args.manifest:
            raise DataError("rerank mode needs --manifest")
        manifest = load_manifest(args.manifest)
        if args.scorer == "trained":
            if not args.checkpoint:
                raise DataError("--scorer trained needs --checkpoint")
            params = load_checkpoint(args.checkpoint)
            expected = vocab_hash(manifest)
            if params.vocab_hash and params.vocab_hash != expected:
                raise DataError(
                    f"checkpoint vocabulary hash {params.vocab_hash[:12]} does not "
                    f"match the manifest ({expected[:12]})"
                )
            scorer = TrainableScorer(params)
        else:
            scorer = LexicalOverlapScorer(vocab_size(manifest))
        if args.modality == "multi":
            if not args.features:
                raise DataError("--modality multi needs --features")
            store = load_feature_store(args.features)

    run = run_retrieval(
        conversations,
        topics,
        index,
        mode=args.mode,
        k=args.k,
        manifest=manifest,
        scorer=scorer,
        store=store,
        multimodal=args.modality == "multi",
        beams=args.beams,
        max_docs=args.max_docs,
        tag=args.tag,
        jobs=args.jobs,
    )
    write_run(args.out, run)
    print(f"wrote run for {len(run.rankings)} topics -> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluation import (
        compute_metrics,
        format_metrics_table,
        metrics_to_json,
        read_qrels,
        read_run,
    )

    run = read_run(args.run)
    qrels = read_qrels(args.qrels, relevance_threshold=args.threshold)
    report = compute_metrics(run, qrels)
    print(format_metrics_table(report))
    if qrels.clamped_negatives:
        print(f"note: {qrels.clamped_negatives} negative grades clamped to 0")
    if args.out:
        Path(args.out).write_text(metrics_to_json(report) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_compare(args) -> int:
    from .evaluation import (
        compare_runs,
        format_comparison_table,
        read_qrels,
        read_run,
    )

    baseline = read_run(args.baseline)
    system = read_run(args.system)
    qrels = read_qrels(args.qrels)
    deltas = compare_runs(baseline, system, qrels)
    print(format_comparison_table(deltas))
    if args.out:
        Path(args.out).write_text(
            json.dumps(deltas, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
    return EXIT_OK


COMMANDS = {
    "index": cmd_index,
    "forge": cmd_forge,
    "split": cmd_split,
    "train": cmd_train,
    "pipeline": cmd_pipeline,
    "eval": cmd_eval,
    "compare": cmd_compare,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"convsearch {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DataError as exc:
        print(f"convsearch {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except RemoteClientError as exc:
        print(f"convsearch {args.command}: {exc}", file=sys.stderr)
        return EXIT_REMOTE
    except ValueError as exc:
        print(f"convsearch {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
