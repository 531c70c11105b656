"""Command-line entry point wiring corpus preparation, index building,
querying, and the evaluation protocols."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import builtin_data_path
from .corpus import (
    build_qc_dataset,
    load_labeled_examples,
    load_paraphrase_pairs,
    load_qa_corpus,
    mask_tokens,
)
from .embed import (
    FrequencyBaselinePredictor,
    embed_sequence,
    hash_backend,
    load_mlm_predictions,
    load_precomputed_store,
    mlm_predict,
    static_backend_load,
)
from .evalkit import (
    MRR_CUTOFF,
    EvalReport,
    RankOutcome,
    classification_metrics,
    fill_blank_accuracy,
    judgment_accuracy,
    load_judgment_labels,
    mrr,
    noise_sweep,
    recall_at_k,
)
from .learn import (
    CnnHead,
    LinearHead,
    TrainConfig,
    load_head,
    save_head,
    train_cnn,
    train_linear,
)
from .represent import PoolingSpec, corpus_stats, represent
from .retrieve import (
    bm25_search,
    build_dense_index,
    build_inverted_index,
    dense_search,
    load_index,
    save_index,
    tfidf_search,
    two_stage_search,
)
from .textnorm import (
    IDENTITY_TABLE,
    TokenSequence,
    clean_markup_report,
    load_mapping_table,
    load_stopwords,
    normalize,
    tokenize,
)

METHODS = ("dense", "bm25", "tfidf", "two-stage")


class CliError(ValueError):
    pass


def _require(args, *names) -> None:
    """Required options are validated here (not by argparse) so a config file
    can supply them."""
    for name in names:
        if getattr(args, name.replace("-", "_"), None) in (None, ""):
            raise CliError(f"missing --{name}")


def _resolve_data_arg(value, builtin_name: str):
    """`builtin` -> packaged file, `none` -> None, anything else -> path."""
    if value is None or value == "none":
        return None
    if value == "builtin":
        return builtin_data_path(builtin_name)
    return Path(value)


def _load_table(args):
    path = _resolve_data_arg(args.mapping_table, "mapping_fa.tsv")
    return IDENTITY_TABLE if path is None else load_mapping_table(path)


def _load_stopwords(args, table):
    path = _resolve_data_arg(args.stopwords, "stopwords_fa.txt")
    return frozenset() if path is None else load_stopwords(path, table)


def _make_backend(args):
    if args.backend == "hash":
        return hash_backend(args.dim, args.seed)
    if args.embeddings is None:
        raise CliError(f"--backend {args.backend} requires --embeddings")
    if args.backend == "static":
        return static_backend_load(args.embeddings)
    return load_precomputed_store(args.embeddings)


def _pooling_spec(args) -> PoolingSpec:
    return PoolingSpec(
        strategy=args.strategy,
        n_keyphrases=args.n_keyphrases,
        context_window=args.window,
    )


def _prepare_query(text: str, table) -> TokenSequence:
    cleaned = normalize(clean_markup_report(text).text, table)
    tokens = tokenize(cleaned)
    if len(tokens) == 0:
        raise CliError("empty query after normalization")
    return tokens


def _parse_floats(spec: str) -> list:
    try:
        return [float(x) for x in spec.split(",") if x.strip() != ""]
    except ValueError:
        raise CliError(f"expected comma-separated numbers, got {spec!r}") from None


def _parse_ints(spec: str) -> list:
    try:
        return [int(x) for x in spec.split(",") if x.strip() != ""]
    except ValueError:
        raise CliError(f"expected comma-separated integers, got {spec!r}") from None


def _emit_report(report: EvalReport, out) -> None:
    print(report.to_text())
    if out:
        Path(out).write_text(report.to_json() + "\n", encoding="utf-8")


def _rank_of(hits, target_id: str):
    for position, (hit_id, _) in enumerate(hits, start=1):
        if hit_id == target_id:
            return position
    return None


def _run_config(args, spec=None, **extra) -> dict:
    """Everything needed to rerun the command; embedded in every report."""
    config = {
        "corpus": str(args.corpus) if getattr(args, "corpus", None) else None,
        "backend": getattr(args, "backend", None),
        "dim": getattr(args, "dim", None),
        "embeddings": str(args.embeddings) if getattr(args, "embeddings", None) else None,
        "mapping_table": getattr(args, "mapping_table", None),
        "stopwords": getattr(args, "stopwords", None),
    }
    if spec is not None:
        config["strategy"] = spec.strategy
        config["n_keyphrases"] = spec.n_keyphrases
        config["context_window"] = spec.context_window
    config.update(extra)
    return config


def cmd_normalize(args) -> int:
    _require(args, "corpus", "out")
    table = _load_table(args)
    corpus = load_qa_corpus(args.corpus)
    warnings = 0
    dropped = 0
    written = 0
    with open(args.out, "w", encoding="utf-8") as handle:
        for rec in corpus:
            q_clean = clean_markup_report(rec.question)
            a_clean = clean_markup_report(rec.answer)
            warnings += q_clean.unclosed_tags + a_clean.unclosed_tags
            question = normalize(q_clean.text, table)
            answer = normalize(a_clean.text, table)
            if not question:
                dropped += 1
                continue
            obj = {
                "id": rec.id,
                "question": question,
                "answer": answer,
                "category": rec.category,
                "source": rec.source,
                "style": rec.style,
            }
            handle.write(json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n")
            written += 1
    print(f"documents={written} warnings={warnings} dropped={dropped}")
    return 0


def cmd_build_index(args) -> int:
    _require(args, "corpus", "out")
    corpus = load_qa_corpus(args.corpus)
    table = _load_table(args)
    stopwords = _load_stopwords(args, table)
    backend = _make_backend(args)
    spec = _pooling_spec(args)
    stats = corpus_stats(corpus) if spec.strategy in ("kw", "kw_rcnt") else None
    index = build_dense_index(corpus, spec, backend, stats, stopwords)
    save_index(index, args.out)
    print(f"entries={len(index)} dim={index.dim} strategy={spec.strategy}")
    return 0


def cmd_query(args) -> int:
    _require(args, "index", "corpus")
    index = load_index(args.index)
    corpus = load_qa_corpus(args.corpus)
    table = _load_table(args)
    backend = _make_backend(args)
    if backend.dim != index.dim:
        raise CliError(f"backend dim {backend.dim} != index dim {index.dim}")
    stats = (
        corpus_stats(corpus) if index.spec.strategy in ("kw", "kw_rcnt") else None
    )
    tokens = _prepare_query(args.text, table)
    rep = represent(tokens, index.spec, backend, stats, index.stopwords)
    if args.k > len(index):
        print(f"warning: k={args.k} exceeds index size {len(index)}", file=sys.stderr)
    hits = dense_search(index, rep.vector, args.k)
    for rank, (hit_id, score) in enumerate(hits, start=1):
        snippet = ""
        if hit_id in corpus:
            snippet = " ".join(corpus[hit_id].question.split())[:80]
        print(f"{rank}\t{hit_id}\t{score:.6f}\t{snippet}")
    return 0


def _build_search_state(args, corpus, stopwords):
    """Everything the retrieval methods share: dense index, inverted index,
    backend, stats, and the pooling spec actually in force."""
    backend = _make_backend(args)
    if args.index:
        dense = load_index(args.index)
        if dense.dim != backend.dim:
            raise CliError(f"backend dim {backend.dim} != index dim {dense.dim}")
        spec = dense.spec
        stopwords = dense.stopwords
    else:
        spec = _pooling_spec(args)
        dense = None
    stats = corpus_stats(corpus)
    if dense is None:
        dense = build_dense_index(corpus, spec, backend, stats, stopwords)
    inverted = None
    if args.method in ("bm25", "tfidf", "two-stage"):
        inverted = build_inverted_index(corpus, stats=stats)
    return backend, dense, inverted, stats, spec, stopwords


def _method_search_fn(args, backend, dense, inverted, stats, spec, stopwords, depth: int):
    if args.method == "dense":
        def run(tokens):
            rep = represent(tokens, spec, backend, stats, stopwords)
            return dense_search(dense, rep.vector, depth)

    elif args.method == "bm25":
        def run(tokens):
            return bm25_search(inverted, tokens, depth, k1=args.k1, b=args.b)

    elif args.method == "tfidf":
        def run(tokens):
            return tfidf_search(inverted, tokens, depth)

    else:  # two-stage
        final = min(depth, args.first_stage_k)

        def run(tokens):
            return two_stage_search(
                inverted,
                dense,
                tokens,
                first_stage_k=args.first_stage_k,
                k=final,
                spec=spec,
                backend=backend,
                stats=stats,
                stopwords=stopwords,
                k1=args.k1,
                b=args.b,
            )

    return run


def cmd_eval_paraphrase(args) -> int:
    _require(args, "corpus", "paraphrases")
    corpus = load_qa_corpus(args.corpus)
    table = _load_table(args)
    stopwords = _load_stopwords(args, table)
    pairs = load_paraphrase_pairs(args.paraphrases, corpus)
    if not pairs:
        raise CliError("no paraphrase pairs to evaluate")
    ks = _parse_ints(args.k_values)
    with_mrr = args.method != "dense"
    depth = max(ks + [MRR_CUTOFF]) if with_mrr else max(ks)
    state = _build_search_state(args, corpus, stopwords)
    search = _method_search_fn(args, *state, depth)
    outcomes = []
    for pair in pairs:
        tokens = _prepare_query(pair.paraphrase, table)
        outcomes.append(RankOutcome(pair.prime_id, _rank_of(search(tokens), pair.prime_id)))
    metrics = {f"R@{k}": recall_at_k(outcomes, k) for k in ks}
    if with_mrr:
        metrics["MRR"] = mrr(outcomes)
    report = EvalReport(
        metrics,
        config=_run_config(
            args,
            spec=state[4],
            protocol="paraphrase",
            method=args.method,
            paraphrases=str(args.paraphrases),
            index=str(args.index) if args.index else None,
            k_values=ks,
            first_stage_k=args.first_stage_k,
            k1=args.k1,
            b=args.b,
        ),
        seed=args.seed,
    )
    _emit_report(report, args.out)
    return 0


def cmd_eval_noise(args) -> int:
    _require(args, "corpus")
    corpus = load_qa_corpus(args.corpus)
    table = _load_table(args)
    stopwords = _load_stopwords(args, table)
    grid = _parse_floats(args.noise_grid)
    state = _build_search_state(args, corpus, stopwords)
    search = _method_search_fn(args, *state, depth=1)
    rng = np.random.default_rng(args.seed)
    n_sample = min(args.sample_size, len(corpus))
    chosen = sorted(int(i) for i in rng.choice(len(corpus), size=n_sample, replace=False))
    sample = [corpus.records[i] for i in chosen]
    indexed = set(state[1].ids)
    missing = [rec.id for rec in sample if rec.id not in indexed]
    if missing:
        raise CliError(f"sampled id {missing[0]!r} is not in the index")
    vocab = sorted({tok for rec in corpus for tok in tokenize(rec.question)})
    rows = noise_sweep(sample, search, vocab, grid, seed=args.seed)
    metrics = {f"m={m:g}": r1 for m, r1 in rows}
    report = EvalReport(
        metrics,
        config=_run_config(
            args,
            spec=state[4],
            protocol="noise",
            method=args.method,
            index=str(args.index) if args.index else None,
            noise_grid=grid,
            sample_size=n_sample,
            first_stage_k=args.first_stage_k,
            k1=args.k1,
            b=args.b,
        ),
        seed=args.seed,
    )
    _emit_report(report, args.out)
    return 0


def cmd_eval_fill(args) -> int:
    _require(args, "corpus")
    corpus = load_qa_corpus(args.corpus)
    table = _load_table(args)
    rng = np.random.default_rng(args.seed)
    records = [rec for rec in corpus if len(tokenize(rec.question)) > 0]
    if not records:
        raise CliError("no usable sentences in the corpus")
    seeds = rng.integers(0, 2**63 - 1, size=len(records))
    masked_set = [
        mask_tokens(tokenize(rec.question), args.mask_rate, seed=int(seeds[i]), sentence_id=rec.id)
        for i, rec in enumerate(records)
    ]
    if args.predictions:
        predictor = load_mlm_predictions(args.predictions)
    else:
        predictor = FrequencyBaselinePredictor.from_corpus(corpus)
    predictions = [mlm_predict(predictor, masked) for masked in masked_set]
    accuracy = fill_blank_accuracy(
        predictions, masked_set, normalizer=lambda s: normalize(s, table)
    )
    report = EvalReport(
        {"accuracy": accuracy},
        config={
            "protocol": "fill",
            "corpus": str(args.corpus),
            "mapping_table": args.mapping_table,
            "mask_rate": args.mask_rate,
            "predictor": predictor.kind,
            "predictions": str(args.predictions) if args.predictions else None,
        },
        seed=args.seed,
    )
    _emit_report(report, args.out)
    return 0


def cmd_eval_judgment(args) -> int:
    _require(args, "judgments")
    labels = load_judgment_labels(args.judgments)
    graded, rigid = judgment_accuracy(labels)
    report = EvalReport(
        {"accuracy_01": rigid, "accuracy": graded},
        config={"protocol": "judgment", "judgments": str(args.judgments), "n": len(labels)},
        seed=args.seed,
    )
    _emit_report(report, args.out)
    return 0


def _load_training_examples(args):
    if args.labeled:
        examples = load_labeled_examples(args.labeled)
    elif args.corpus and args.target_category:
        corpus = load_qa_corpus(args.corpus)
        examples = build_qc_dataset(
            corpus, args.target_category, args.n_pos, args.n_neg, seed=args.seed
        )
    else:
        raise CliError("need --labeled, or --corpus with --target-category")
    if not examples:
        raise CliError("no training examples")
    return examples


def _head_defaults(head: str, args) -> TrainConfig:
    if head == "linear":
        epochs, batch, dropout = 10, 8, 0.1
    else:
        epochs, batch, dropout = 3, 16, 0.0
    return TrainConfig(
        epochs=args.epochs if args.epochs is not None else epochs,
        batch_size=args.batch_size if args.batch_size is not None else batch,
        learning_rate=args.lr,
        dropout=args.dropout if args.dropout is not None else dropout,
        seed=args.seed,
    )


def cmd_train_classifier(args) -> int:
    _require(args, "head", "out")
    examples = _load_training_examples(args)
    num_classes = max(ex.label for ex in examples) + 1
    if num_classes < 2:
        raise CliError("need at least two classes")
    table = _load_table(args)
    stopwords = _load_stopwords(args, table)
    backend = _make_backend(args)
    config = _head_defaults(args.head, args)
    spec = _pooling_spec(args)
    meta = {
        "strategy": spec.strategy,
        "n_keyphrases": spec.n_keyphrases,
        "context_window": spec.context_window,
        "epochs": config.epochs,
        "batch_size": config.batch_size,
        "learning_rate": config.learning_rate,
        "dropout": config.dropout,
    }
    if args.head == "linear":
        stats = None
        if spec.strategy in ("kw", "kw_rcnt"):
            if not args.corpus:
                raise CliError("kw strategies need --corpus for statistics")
            stats = corpus_stats(load_qa_corpus(args.corpus))
        dataset = []
        for ex in examples:
            rep = represent(ex.text, spec, backend, stats, stopwords)
            dataset.append((rep.vector, ex.label))
        head = LinearHead.create(backend.dim, num_classes, seed=args.seed)
        head, losses = train_linear(head, dataset, config)
    else:
        dataset = []
        for ex in examples:
            tokens = tokenize(ex.text)
            if len(tokens) == 0:
                raise CliError(f"example {ex.origin_id!r} has no tokens")
            dataset.append((tokens, ex.label))
        head = CnnHead.create(backend.dim, num_classes, seed=args.seed)
        head, losses = train_cnn(head, dataset, backend, config)
    save_head(head, args.out, config=meta, seed=args.seed)
    print(f"head={args.head} examples={len(examples)} epochs={config.epochs} final_loss={losses[-1]:.6f}")
    return 0


def cmd_eval_classifier(args) -> int:
    _require(args, "checkpoint", "labeled")
    head, meta = load_head(args.checkpoint)
    examples = load_labeled_examples(args.labeled)
    if not examples:
        raise CliError("no evaluation examples")
    table = _load_table(args)
    stopwords = _load_stopwords(args, table)
    backend = _make_backend(args)
    if backend.dim != head.dim:
        raise CliError(f"backend dim {backend.dim} != head dim {head.dim}")
    stored = meta.get("config", {})
    predictions = []
    if meta["kind"] == "linear":
        spec = PoolingSpec(
            strategy=stored.get("strategy", "all"),
            n_keyphrases=stored.get("n_keyphrases", 5),
            context_window=stored.get("context_window", 2),
        )
        stats = None
        if spec.strategy in ("kw", "kw_rcnt"):
            if not args.corpus:
                raise CliError("kw strategies need --corpus for statistics")
            stats = corpus_stats(load_qa_corpus(args.corpus))
        for ex in examples:
            rep = represent(ex.text, spec, backend, stats, stopwords)
            predictions.append(head.predict(rep.vector))
    else:
        for ex in examples:
            tokens = tokenize(ex.text)
            if len(tokens) == 0:
                raise CliError(f"example {ex.origin_id!r} has no tokens")
            predictions.append(head.predict(embed_sequence(backend, tokens)))
    golds = [ex.label for ex in examples]
    precision, recall, macro_f1, accuracy = classification_metrics(
        predictions, golds, head.classes
    )
    report = EvalReport(
        {
            "precision": precision,
            "recall": recall,
            "macro_f1": macro_f1,
            "accuracy": accuracy,
        },
        config=_run_config(
            args,
            protocol="classify",
            checkpoint=str(args.checkpoint),
            labeled=str(args.labeled),
            kind=meta["kind"],
            n=len(examples),
        ),
        seed=args.seed,
    )
    _emit_report(report, args.out)
    return 0


def _add_common(parser):
    parser.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    parser.add_argument("--out", help="output path")
    parser.add_argument("--config", help="key=value config file; flags override it")


def _add_data(parser):
    parser.add_argument("--corpus", help="QA corpus JSON-Lines")
    parser.add_argument(
        "--mapping-table",
        default="builtin",
        help="normalization table TSV; `builtin` (default) or `none`",
    )
    parser.add_argument(
        "--stopwords", default="none", help="stop-word list; `builtin` or `none` (default)"
    )


def _add_backend(parser):
    parser.add_argument(
        "--backend", choices=("static", "hash", "precomputed"), default="hash"
    )
    parser.add_argument("--embeddings", help="embedding file for static/precomputed backends")
    parser.add_argument("--dim", type=int, default=64, help="hash backend dimension")


def _add_pooling(parser):
    parser.add_argument(
        "--strategy", choices=("all", "rsw", "kw", "kw_rcnt"), default="all"
    )
    parser.add_argument("--n-keyphrases", type=int, default=5)
    parser.add_argument("--window", type=int, default=2)


def _add_retrieval(parser):
    parser.add_argument("--k1", type=float, default=1.2, help="BM25 k1")
    parser.add_argument("--b", type=float, default=0.75, help="BM25 b")
    parser.add_argument("--first-stage-k", type=int, default=100)
    parser.add_argument("--method", choices=METHODS, default="dense")
    parser.add_argument("--index", help="prebuilt dense index (else built in memory)")


def build_parser() -> tuple:
    parser = argparse.ArgumentParser(prog="medqr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {}

    p = sub.add_parser("normalize", help="clean markup and normalize a corpus")
    _add_data(p)
    _add_common(p)
    p.set_defaults(func=cmd_normalize)
    commands["normalize"] = p

    p = sub.add_parser("build-index", help="build and save a dense index")
    _add_data(p)
    _add_backend(p)
    _add_pooling(p)
    _add_common(p)
    p.set_defaults(func=cmd_build_index)
    commands["build-index"] = p

    p = sub.add_parser("query", help="query a dense index")
    p.add_argument("text", help="query text")
    p.add_argument("--index")
    p.add_argument("--k", type=int, default=10)
    _add_data(p)
    _add_backend(p)
    _add_common(p)
    p.set_defaults(func=cmd_query)
    commands["query"] = p

    p = sub.add_parser("eval-paraphrase", help="paraphrase retrieval protocol (R@k, MRR)")
    p.add_argument("--paraphrases", help="JSON-Lines {prime_id, paraphrase}")
    p.add_argument("--k-values", default="1,5,10")
    _add_data(p)
    _add_backend(p)
    _add_pooling(p)
    _add_retrieval(p)
    _add_common(p)
    p.set_defaults(func=cmd_eval_paraphrase)
    commands["eval-paraphrase"] = p

    p = sub.add_parser("eval-noise", help="noisy-query robustness protocol (R@1 per level)")
    p.add_argument("--noise-grid", default="0.1,0.2,0.3,0.4,0.5")
    p.add_argument("--sample-size", type=int, default=1000)
    _add_data(p)
    _add_backend(p)
    _add_pooling(p)
    _add_retrieval(p)
    _add_common(p)
    p.set_defaults(func=cmd_eval_noise)
    commands["eval-noise"] = p

    p = sub.add_parser("eval-fill", help="fill-in-the-blank protocol")
    p.add_argument("--mask-rate", type=float, default=0.15)
    p.add_argument("--predictions", help="external JSON-Lines {sentence_id, position, token}")
    _add_data(p)
    _add_common(p)
    p.set_defaults(func=cmd_eval_fill)
    commands["eval-fill"] = p

    p = sub.add_parser("eval-judgment", help="graded human-judgment accuracy")
    p.add_argument("--judgments", help="JSON-Lines {query_id, grade}")
    _add_common(p)
    p.set_defaults(func=cmd_eval_judgment)
    commands["eval-judgment"] = p

    p = sub.add_parser("train-classifier", help="train a linear or CNN head")
    p.add_argument("--head", choices=("linear", "cnn"))
    p.add_argument("--labeled", help="JSON-Lines {text, label, origin_id}")
    p.add_argument("--target-category", help="build a binary set from the corpus")
    p.add_argument("--n-pos", type=int, default=1000)
    p.add_argument("--n-neg", type=int, default=3400)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float, default=2e-5)
    p.add_argument("--dropout", type=float)
    _add_data(p)
    _add_backend(p)
    _add_pooling(p)
    _add_common(p)
    p.set_defaults(func=cmd_train_classifier)
    commands["train-classifier"] = p

    p = sub.add_parser("eval-classifier", help="classification metrics for a trained head")
    p.add_argument("--checkpoint")
    p.add_argument("--labeled")
    _add_data(p)
    _add_backend(p)
    _add_common(p)
    p.set_defaults(func=cmd_eval_classifier)
    commands["eval-classifier"] = p

    return parser, commands


def _read_config_file(path) -> dict:
    values = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise CliError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _peek_config(argv):
    for i, arg in enumerate(argv):
        if arg == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if arg.startswith("--config="):
            return arg.split("=", 1)[1]
    return None


def _apply_config(command_parser, config_path) -> None:
    """Config file entries become the parser defaults; explicit flags win.
    Keys that belong to other subcommands are ignored."""
    raw = _read_config_file(config_path)
    types = {
        action.dest: action.type for action in command_parser._actions if action.dest
    }
    defaults = {}
    for key, value in raw.items():
        if key not in types:
            continue
        converter = types[key]
        defaults[key] = converter(value) if callable(converter) else value
    command_parser.set_defaults(**defaults)


def main(argv=None) -> int:
    parser, commands = build_parser()
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        config_path = _peek_config(argv)
        if config_path:
            command = next((a for a in argv if not a.startswith("-")), None)
            if command in commands:
                _apply_config(commands[command], config_path)
        args = parser.parse_args(argv)
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
