"""TF-IDF corpus statistics, keyphrase extraction, and the pooling strategies
that turn a question into one dense vector.

Four strategies are supported:

* ``all``     — mean of every token embedding.
* ``rsw``     — mean with stop-word positions removed.
* ``kw``      — the question is replaced by its top TF-IDF keyphrases, each
                with a window of context tokens, regions joined by ``[SEP]``;
                the mean runs over the whole synthesized sequence.
* ``kw_rcnt`` — same synthesized sequence, but the mean is restricted to the
                keyphrase positions themselves (context and separators are
                dropped just before pooling).

Degenerate inputs (all tokens are stop-words, no keyphrase candidates) fall
back to ``all`` so retrieval stays total over dirty data.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .corpus import Corpus, QARecord
from .embed import EmbeddingBackend, embed_sequence
from .textnorm import SEP_TOKEN, TokenSequence, tokenize

STRATEGIES = ("all", "rsw", "kw", "kw_rcnt")


class RepresentError(ValueError):
    pass


@dataclass(frozen=True)
class TfIdfStats:
    """Document frequencies and smoothed IDF over question tokens.

    idf(t) = ln((N + 1) / (df(t) + 1)) + 1, which stays positive for every
    df in [0, N]; unseen tokens take df = 0.
    """

    n_docs: int
    df: dict
    idf: dict
    avgdl: float

    def idf_of(self, token: str) -> float:
        got = self.idf.get(token)
        if got is not None:
            return got
        return math.log(self.n_docs + 1) + 1.0


@dataclass(frozen=True)
class KeyphraseSpan:
    start: int
    end: int
    score: float


@dataclass(frozen=True)
class PoolingSpec:
    strategy: str
    n_keyphrases: int = 5
    context_window: int = 2

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise RepresentError(f"unknown strategy {self.strategy!r}")
        if self.strategy in ("kw", "kw_rcnt") and self.n_keyphrases < 1:
            raise RepresentError("n_keyphrases must be >= 1 for kw strategies")
        if self.context_window < 0:
            raise RepresentError("context_window must be >= 0")


@dataclass(frozen=True)
class QuestionRepresentation:
    vector: np.ndarray
    spec: PoolingSpec
    source_id: str


def corpus_stats(corpus: Corpus, tokenizer: Callable = tokenize) -> TfIdfStats:
    """Document frequencies, smoothed IDF, and mean question length."""
    if len(corpus) == 0:
        raise RepresentError("empty corpus")
    df: Counter = Counter()
    total_len = 0
    for rec in corpus:
        toks = tokenizer(rec.question)
        total_len += len(toks)
        df.update(set(toks.tokens))
    n = len(corpus)
    idf = {tok: math.log((n + 1) / (count + 1)) + 1.0 for tok, count in df.items()}
    return TfIdfStats(n_docs=n, df=dict(df), idf=idf, avgdl=total_len / n)


def extract_keyphrases(
    tokens: TokenSequence,
    stats: TfIdfStats,
    n: int,
    stopwords: frozenset = frozenset(),
) -> list:
    """Top-n token types by tf*idf, each anchored at its first occurrence.

    Ties resolve by higher idf, then earlier first position.  Spans come back
    in ascending start order; fewer than n when candidates run out.
    """
    if n < 1:
        raise RepresentError("n must be >= 1")
    counts = Counter(tokens.tokens)
    first_pos: dict = {}
    for i, tok in enumerate(tokens.tokens):
        if tok not in first_pos:
            first_pos[tok] = i
    scored = []
    for tok, tf in counts.items():
        if tok in stopwords:
            continue
        idf = stats.idf_of(tok)
        scored.append((tf * idf, idf, first_pos[tok], tok))
    scored.sort(key=lambda item: (-item[0], -item[1], item[2]))
    selected = scored[:n]
    selected.sort(key=lambda item: item[2])
    return [KeyphraseSpan(pos, pos + 1, score) for score, _, pos, _ in selected]


def build_keyphrase_sequence(
    tokens: TokenSequence, spans: Sequence, window: int
) -> tuple:
    """Expand each span by `window` context tokens on both sides, join regions
    with a single ``[SEP]``, and mark which output positions came from inside
    a span.

    Regions that overlap merge without duplicating tokens; regions that merely
    touch stay separate and get a ``[SEP]`` between them.
    """
    n = len(tokens)
    prev_end = 0
    for span in spans:
        if not (0 <= span.start < span.end <= n):
            raise RepresentError(f"span ({span.start}, {span.end}) out of bounds")
        if span.start < prev_end:
            raise RepresentError("spans must be ascending and disjoint")
        prev_end = span.end
    regions: list = []  # [lo, hi, [spans]]
    for span in spans:
        lo = max(0, span.start - window)
        hi = min(n, span.end + window)
        if regions and lo < regions[-1][1]:
            regions[-1][1] = max(regions[-1][1], hi)
            regions[-1][2].append(span)
        else:
            regions.append([lo, hi, [span]])
    out_tokens: list = []
    mask: list = []
    for ridx, (lo, hi, members) in enumerate(regions):
        if ridx > 0:
            out_tokens.append(SEP_TOKEN)
            mask.append(False)
        for idx in range(lo, hi):
            out_tokens.append(tokens.tokens[idx])
            mask.append(any(s.start <= idx < s.end for s in members))
    return TokenSequence(tuple(out_tokens), None), mask


def _as_tokens(question, tokenizer: Callable) -> tuple:
    if isinstance(question, TokenSequence):
        return question, ""
    if isinstance(question, QARecord):
        return tokenizer(question.question), question.id
    return tokenizer(question), ""


def represent(
    question,
    spec: PoolingSpec,
    backend: EmbeddingBackend,
    stats: TfIdfStats | None = None,
    stopwords: frozenset = frozenset(),
    tokenizer: Callable = tokenize,
    seq_id: str | None = None,
) -> QuestionRepresentation:
    """Pool a question (text, QARecord, or TokenSequence) into one vector."""
    tokens, source_id = _as_tokens(question, tokenizer)
    if seq_id is None and source_id:
        seq_id = source_id
    if len(tokens) == 0:
        raise RepresentError("question has no tokens")

    def pool_all() -> np.ndarray:
        return embed_sequence(backend, tokens, seq_id=seq_id).mean(axis=0)

    if spec.strategy == "all":
        vector = pool_all()
    elif spec.strategy == "rsw":
        keep = [i for i, tok in enumerate(tokens.tokens) if tok not in stopwords]
        if not keep:
            vector = pool_all()
        else:
            vector = embed_sequence(backend, tokens, seq_id=seq_id)[keep].mean(axis=0)
    else:
        if stats is None:
            raise RepresentError("kw strategies require corpus statistics")
        spans = extract_keyphrases(tokens, stats, spec.n_keyphrases, stopwords)
        if not spans:
            vector = pool_all()
        else:
            sequence, kp_mask = build_keyphrase_sequence(tokens, spans, spec.context_window)
            vectors = embed_sequence(backend, sequence, seq_id=seq_id)
            if spec.strategy == "kw":
                vector = vectors.mean(axis=0)
            else:  # kw_rcnt
                rows = [i for i, flag in enumerate(kp_mask) if flag]
                vector = vectors[rows].mean(axis=0)
    if not np.all(np.isfinite(vector)):
        raise RepresentError("non-finite representation")
    return QuestionRepresentation(vector=vector, spec=spec, source_id=source_id)
