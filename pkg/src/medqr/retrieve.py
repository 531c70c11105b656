"""Dense cosine index, BM25 / TF-IDF bag-of-words retrieval, two-stage
re-ranking, and binary index persistence."""

from __future__ import annotations

import json
import math
import struct
from collections import Counter
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .corpus import Corpus
from .embed import EmbeddingBackend
from .represent import PoolingSpec, TfIdfStats, corpus_stats, represent
from .textnorm import TokenSequence, tokenize

INDEX_MAGIC = b"SINAIDX1"


class RetrievalError(ValueError):
    pass


class IndexFormatError(ValueError):
    pass


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity; 0.0 when either vector has zero norm."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise RetrievalError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


@dataclass
class DenseIndex:
    """Per-question representation vectors (float32) plus the pooling spec
    and stop-word set they were built with."""

    dim: int
    spec: PoolingSpec
    stopwords: frozenset
    ids: list
    matrix: np.ndarray  # (n, dim) float32

    def __post_init__(self):
        if len(self.ids) != len(set(self.ids)):
            raise RetrievalError("duplicate ids in index")
        if self.matrix.shape != (len(self.ids), self.dim):
            raise RetrievalError(
                f"matrix shape {self.matrix.shape} != ({len(self.ids)}, {self.dim})"
            )
        self._row_of = {rid: i for i, rid in enumerate(self.ids)}
        # Per-row 1-D norms so search scores are bitwise identical to cosine()
        # on each row; a vectorized axis-norm can differ in the last ulp.
        self._norms = np.array(
            [np.linalg.norm(row.astype(np.float64)) for row in self.matrix]
        )

    def __len__(self) -> int:
        return len(self.ids)

    def vector_of(self, record_id: str) -> np.ndarray:
        return self.matrix[self._row_of[record_id]]


def build_dense_index(
    corpus: Corpus,
    spec: PoolingSpec,
    backend: EmbeddingBackend,
    stats: TfIdfStats | None = None,
    stopwords: frozenset = frozenset(),
    tokenizer: Callable = tokenize,
) -> DenseIndex:
    """Represent every corpus question under `spec` and stack the vectors."""
    if len(corpus) == 0:
        raise RetrievalError("cannot index an empty corpus")
    if spec.strategy in ("kw", "kw_rcnt") and stats is None:
        stats = corpus_stats(corpus, tokenizer)
    ids = []
    rows = []
    for rec in corpus:
        rep = represent(rec, spec, backend, stats, stopwords, tokenizer)
        ids.append(rec.id)
        rows.append(rep.vector)
    matrix = np.stack(rows).astype(np.float32)
    return DenseIndex(dim=backend.dim, spec=spec, stopwords=stopwords, ids=ids, matrix=matrix)


def _top_k(scores: dict, k: int) -> list:
    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
    return ranked[:k]


def dense_search(index: DenseIndex, query_vector: np.ndarray, k: int) -> list:
    """Exact brute-force top-k by cosine; ties break by id ascending."""
    if k < 1:
        raise RetrievalError("k must be >= 1")
    if len(index) == 0:
        raise RetrievalError("empty index")
    q = np.asarray(query_vector, dtype=np.float64)
    if q.shape != (index.dim,):
        raise RetrievalError(f"query dim {q.shape} != ({index.dim},)")
    qnorm = np.linalg.norm(q)
    n = len(index)
    scores = np.zeros(n)
    if qnorm != 0.0:
        # Row-by-row dots, matching cosine() bitwise so that exact ties (e.g.
        # duplicate vectors) break by id identically to a naive full scan;
        # blocked BLAS matmul can score identical rows apart by one ulp.
        norms = index._norms
        for i in range(n):
            if norms[i] != 0.0:
                scores[i] = np.dot(index.matrix[i].astype(np.float64), q) / (norms[i] * qnorm)
    order = sorted(range(n), key=lambda i: (-scores[i], index.ids[i]))
    return [(index.ids[i], float(scores[i])) for i in order[:k]]


@dataclass
class InvertedIndex:
    """Token postings over question tokens, with per-document lengths and the
    corpus TF-IDF statistics."""

    postings: dict  # token -> list[(doc_id, tf)] sorted by doc_id
    doc_len: dict
    stats: TfIdfStats

    def __len__(self) -> int:
        return len(self.doc_len)


def build_inverted_index(
    corpus: Corpus, tokenizer: Callable = tokenize, stats: TfIdfStats | None = None
) -> InvertedIndex:
    if len(corpus) == 0:
        raise RetrievalError("cannot index an empty corpus")
    if stats is None:
        stats = corpus_stats(corpus, tokenizer)
    postings: dict = {}
    doc_len: dict = {}
    for rec in corpus:
        toks = tokenizer(rec.question)
        doc_len[rec.id] = len(toks)
        for tok, tf in Counter(toks.tokens).items():
            postings.setdefault(tok, []).append((rec.id, tf))
    for plist in postings.values():
        plist.sort(key=lambda entry: entry[0])
    return InvertedIndex(postings=postings, doc_len=doc_len, stats=stats)


def _query_tokens(query) -> tuple:
    if isinstance(query, TokenSequence):
        return query.tokens
    return tuple(query)


def bm25_idf(df: int, n_docs: int) -> float:
    """ln(1 + (N - df + 0.5) / (df + 0.5)); nonnegative for any df <= N."""
    return math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5))


def bm25_search(
    index: InvertedIndex, query_tokens, k: int, k1: float = 1.2, b: float = 0.75
) -> list:
    """Okapi scoring over distinct query terms; zero-score documents excluded."""
    if k < 1:
        raise RetrievalError("k must be >= 1")
    if len(index) == 0:
        raise RetrievalError("empty index")
    stats = index.stats
    scores: dict = {}
    # sorted so per-document accumulation order (and thus ulps) does not
    # depend on the process hash seed
    for tok in sorted(set(_query_tokens(query_tokens))):
        plist = index.postings.get(tok)
        if not plist:
            continue
        idf = bm25_idf(stats.df.get(tok, 0), stats.n_docs)
        for doc_id, tf in plist:
            norm = k1 * (1.0 - b + b * index.doc_len[doc_id] / stats.avgdl)
            scores[doc_id] = scores.get(doc_id, 0.0) + idf * tf * (k1 + 1.0) / (tf + norm)
    scores = {d: s for d, s in scores.items() if s > 0.0}
    return _top_k(scores, k)


def tfidf_search(index: InvertedIndex, query_tokens, k: int) -> list:
    """Rank by dot product of L2-normalized tf*idf bag vectors."""
    if k < 1:
        raise RetrievalError("k must be >= 1")
    if len(index) == 0:
        raise RetrievalError("empty index")
    stats = index.stats
    q_counts = Counter(_query_tokens(query_tokens))
    q_weights = {tok: tf * stats.idf_of(tok) for tok, tf in q_counts.items()}
    q_norm = math.sqrt(sum(w * w for w in q_weights.values()))
    if q_norm == 0.0:
        return []
    doc_sq: dict = {}
    for tok, plist in index.postings.items():
        idf = stats.idf_of(tok)
        for doc_id, tf in plist:
            doc_sq[doc_id] = doc_sq.get(doc_id, 0.0) + (tf * idf) ** 2
    scores: dict = {}
    for tok, qw in q_weights.items():
        plist = index.postings.get(tok)
        if not plist:
            continue
        idf = stats.idf_of(tok)
        for doc_id, tf in plist:
            scores[doc_id] = scores.get(doc_id, 0.0) + qw * tf * idf
    scores = {
        d: s / (q_norm * math.sqrt(doc_sq[d])) for d, s in scores.items() if s > 0.0
    }
    return _top_k(scores, k)


def two_stage_search(
    inverted: InvertedIndex,
    dense: DenseIndex,
    query,
    first_stage_k: int = 100,
    k: int = 10,
    spec: PoolingSpec | None = None,
    backend: EmbeddingBackend | None = None,
    stats: TfIdfStats | None = None,
    stopwords: frozenset | None = None,
    tokenizer: Callable = tokenize,
    k1: float = 1.2,
    b: float = 0.75,
) -> list:
    """BM25 retrieves the first_stage_k candidates; each is re-scored by cosine
    against the pooled query representation; the final top-k is returned."""
    if not first_stage_k >= k >= 1:
        raise RetrievalError(f"need first_stage_k >= k >= 1, got {first_stage_k}, {k}")
    if backend is None:
        raise RetrievalError("two-stage search needs an embedding backend")
    tokens = query if isinstance(query, TokenSequence) else tokenizer(query)
    candidates = bm25_search(inverted, tokens, first_stage_k, k1=k1, b=b)
    if not candidates:
        return []
    rep = represent(
        tokens,
        spec if spec is not None else dense.spec,
        backend,
        stats,
        dense.stopwords if stopwords is None else stopwords,
        tokenizer,
    )
    rescored = {doc_id: cosine(rep.vector, dense.vector_of(doc_id)) for doc_id, _ in candidates}
    return _top_k(rescored, k)


def _spec_to_json(spec: PoolingSpec, stopwords: frozenset) -> bytes:
    payload = {
        "strategy": spec.strategy,
        "n_keyphrases": spec.n_keyphrases,
        "context_window": spec.context_window,
        "stopwords": sorted(stopwords),
    }
    return json.dumps(payload, ensure_ascii=False, sort_keys=True).encode("utf-8")


def save_index(index: DenseIndex, path) -> None:
    """Binary layout: magic `SINAIDX1`, u32 dim, u64 count, u32-prefixed spec
    JSON, then per entry u16 id length + id bytes + dim little-endian f32."""
    spec_blob = _spec_to_json(index.spec, index.stopwords)
    with open(path, "wb") as handle:
        handle.write(INDEX_MAGIC)
        handle.write(struct.pack("<I", index.dim))
        handle.write(struct.pack("<Q", len(index)))
        handle.write(struct.pack("<I", len(spec_blob)))
        handle.write(spec_blob)
        for i, rid in enumerate(index.ids):
            rid_bytes = rid.encode("utf-8")
            if len(rid_bytes) > 0xFFFF:
                raise IndexFormatError(f"id too long to serialize: {rid!r}")
            handle.write(struct.pack("<H", len(rid_bytes)))
            handle.write(rid_bytes)
            handle.write(index.matrix[i].astype("<f4").tobytes())


def _read_exact(handle, size: int, what: str) -> bytes:
    data = handle.read(size)
    if len(data) != size:
        raise IndexFormatError(
            f"truncated file at byte {handle.tell() - len(data)} while reading {what}"
        )
    return data


def load_index(path) -> DenseIndex:
    with open(path, "rb") as handle:
        magic = handle.read(len(INDEX_MAGIC))
        if magic != INDEX_MAGIC:
            raise IndexFormatError("bad magic")
        dim = struct.unpack("<I", _read_exact(handle, 4, "dim"))[0]
        count = struct.unpack("<Q", _read_exact(handle, 8, "count"))[0]
        spec_len = struct.unpack("<I", _read_exact(handle, 4, "spec length"))[0]
        try:
            payload = json.loads(_read_exact(handle, spec_len, "spec").decode("utf-8"))
            spec = PoolingSpec(
                strategy=payload["strategy"],
                n_keyphrases=payload["n_keyphrases"],
                context_window=payload["context_window"],
            )
            stopwords = frozenset(payload["stopwords"])
        except (KeyError, ValueError) as exc:
            raise IndexFormatError(f"bad spec header: {exc}") from None
        ids = []
        rows = []
        for i in range(count):
            id_len = struct.unpack("<H", _read_exact(handle, 2, f"id length of entry {i}"))[0]
            ids.append(_read_exact(handle, id_len, f"id of entry {i}").decode("utf-8"))
            vec = np.frombuffer(
                _read_exact(handle, 4 * dim, f"vector of entry {i}"), dtype="<f4"
            )
            rows.append(vec)
        trailing = handle.read(1)
        if trailing:
            raise IndexFormatError(f"trailing bytes at offset {handle.tell() - 1}")
    matrix = np.stack(rows) if rows else np.zeros((0, dim), dtype=np.float32)
    return DenseIndex(dim=dim, spec=spec, stopwords=stopwords, ids=ids, matrix=matrix)
