#!/usr/bin/env python3
"""Compare the four pooling strategies (and the TF-IDF/BM25 baselines) on a
corpus with paraphrase queries: R@k per strategy plus a noise sweep.

Example:
    python scripts/make_synthetic_corpus.py --out-dir /tmp/syn
    python scripts/compare_strategies.py --corpus /tmp/syn/corpus.jsonl \
        --paraphrases /tmp/syn/paraphrases.jsonl --dim 64
"""

from __future__ import annotations

import argparse

import numpy as np

from medqr.corpus import load_paraphrase_pairs, load_qa_corpus
from medqr.embed import hash_backend
from medqr.evalkit import RankOutcome, noise_sweep, recall_at_k
from medqr.represent import PoolingSpec, corpus_stats, represent
from medqr.retrieve import (
    bm25_search,
    build_dense_index,
    build_inverted_index,
    dense_search,
    tfidf_search,
)
from medqr.textnorm import tokenize

STRATEGIES = ("all", "rsw", "kw", "kw_rcnt")


def paraphrase_recalls(corpus, pairs, search_fn, ks):
    outcomes = []
    for pair in pairs:
        hits = search_fn(tokenize(pair.paraphrase))
        rank = None
        for position, (hit_id, _) in enumerate(hits, start=1):
            if hit_id == pair.prime_id:
                rank = position
                break
        outcomes.append(RankOutcome(pair.prime_id, rank))
    return [recall_at_k(outcomes, k) for k in ks]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--corpus", required=True)
    parser.add_argument("--paraphrases", required=True)
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--noise-grid", default="0.1,0.2,0.3,0.4,0.5")
    parser.add_argument("--noise-sample", type=int, default=100)
    args = parser.parse_args()

    corpus = load_qa_corpus(args.corpus)
    pairs = load_paraphrase_pairs(args.paraphrases, corpus)
    stats = corpus_stats(corpus)
    backend = hash_backend(args.dim, seed=args.seed)
    inverted = build_inverted_index(corpus, stats=stats)
    ks = (1, 5, 10)
    grid = [float(x) for x in args.noise_grid.split(",")]

    rng = np.random.default_rng(args.seed)
    sample_rows = sorted(
        int(i) for i in rng.choice(len(corpus), size=min(args.noise_sample, len(corpus)), replace=False)
    )
    sample = [corpus.records[i] for i in sample_rows]
    vocab = sorted({tok for rec in corpus for tok in tokenize(rec.question)})

    header = ["method"] + [f"R@{k}" for k in ks] + [f"noise m={m:g}" for m in grid]
    rows = []
    for strategy in STRATEGIES:
        spec = PoolingSpec(strategy)
        index = build_dense_index(corpus, spec, backend, stats)

        def dense_fn(tokens, _spec=spec, _index=index):
            rep = represent(tokens, _spec, backend, stats)
            return dense_search(_index, rep.vector, max(ks))

        recalls = paraphrase_recalls(corpus, pairs, dense_fn, ks)
        sweep = noise_sweep(sample, lambda t, f=dense_fn: f(t)[:1], vocab, grid, seed=args.seed)
        rows.append([strategy] + recalls + [r for _, r in sweep])

    for name, fn in (
        ("tfidf", lambda t: tfidf_search(inverted, t, max(ks))),
        ("bm25", lambda t: bm25_search(inverted, t, max(ks))),
    ):
        recalls = paraphrase_recalls(corpus, pairs, fn, ks)
        sweep = noise_sweep(sample, lambda t, f=fn: f(t)[:1], vocab, grid, seed=args.seed)
        rows.append([name] + recalls + [r for _, r in sweep])

    widths = [max(len(header[i]), *(len(f"{row[i]:.4f}") if i else len(row[i]) for row in rows)) for i in range(len(header))]
    print("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    for row in rows:
        cells = [row[0].ljust(widths[0])] + [
            f"{value:.4f}".rjust(w) for value, w in zip(row[1:], widths[1:])
        ]
        print("  ".join(cells))


if __name__ == "__main__":
    main()
