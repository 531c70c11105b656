"""Pluggable token-embedding backends and masked-token predictors.

Backends map a token sequence to a same-length sequence of vectors and stand
in for a frozen language model.  The `precomputed_contextual` kind ingests
per-sequence vectors exported offline, so real transformer outputs can flow
through the identical pipeline without any inference code here.
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .corpus import Corpus, MaskedSentence
from .textnorm import TokenSequence, tokenize


class EmbeddingError(ValueError):
    pass


class PredictionError(ValueError):
    pass


class EmbeddingBackend:
    """Base class; concrete kinds implement vectors()."""

    kind: str = "abstract"

    def __init__(self, dim: int):
        if dim < 1:
            raise EmbeddingError(f"dim must be >= 1, got {dim}")
        self.dim = dim

    def vectors(self, tokens: Sequence, seq_id: str | None = None) -> np.ndarray:
        raise NotImplementedError


class StaticTableBackend(EmbeddingBackend):
    """Word-vector lookup table; out-of-vocabulary tokens map to zeros."""

    kind = "static_table"

    def __init__(self, dim: int, table: dict):
        super().__init__(dim)
        self._table = table
        self._zero = np.zeros(dim)

    def vectors(self, tokens, seq_id=None):
        if len(tokens) == 0:
            return np.zeros((0, self.dim))
        return np.stack([self._table.get(tok, self._zero) for tok in tokens])


class HashBackend(EmbeddingBackend):
    """Deterministic pseudo-random unit vectors keyed by token content.

    The per-token stream is seeded by (seed, blake2b-64(token)), so the same
    token yields the same vector across runs and platforms.
    """

    kind = "hash"

    def __init__(self, dim: int, seed: int = 0):
        super().__init__(dim)
        self.seed = seed
        self._cache: dict = {}

    def _vector(self, token: str) -> np.ndarray:
        cached = self._cache.get(token)
        if cached is not None:
            return cached
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        token_key = int.from_bytes(digest, "little")
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, token_key]))
        vec = rng.standard_normal(self.dim)
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            vec[0] = 1.0
            norm = 1.0
        vec /= norm
        self._cache[token] = vec
        return vec

    def vectors(self, tokens, seq_id=None):
        if len(tokens) == 0:
            return np.zeros((0, self.dim))
        return np.stack([self._vector(tok) for tok in tokens])


class PrecomputedBackend(EmbeddingBackend):
    """Contextual vectors exported offline, looked up by sequence id."""

    kind = "precomputed_contextual"

    def __init__(self, dim: int, store: dict):
        super().__init__(dim)
        self._store = store

    def vectors(self, tokens, seq_id=None):
        if seq_id is None:
            raise EmbeddingError("precomputed backend requires a sequence id")
        if seq_id not in self._store:
            raise EmbeddingError(f"no precomputed vectors for sequence {seq_id!r}")
        arr = self._store[seq_id]
        if len(arr) != len(tokens):
            raise EmbeddingError(
                f"sequence {seq_id!r}: stored {len(arr)} vectors for {len(tokens)} tokens"
            )
        return arr


def static_backend_load(path) -> StaticTableBackend:
    """Load the classic text word-vector format: header `V D`, then
    `token f1 ... fD` per line."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise EmbeddingError(f"{path}: empty file")
    header = lines[0].split()
    if len(header) != 2:
        raise EmbeddingError(f"{path}:1: expected header `V D`")
    try:
        vocab_size, dim = int(header[0]), int(header[1])
    except ValueError:
        raise EmbeddingError(f"{path}:1: expected integer header `V D`") from None
    data_lines = [ln for ln in lines[1:] if ln.strip()]
    if len(data_lines) != vocab_size:
        raise EmbeddingError(
            f"{path}: header declares {vocab_size} vectors, found {len(data_lines)}"
        )
    table: dict = {}
    for lineno, line in enumerate(data_lines, start=2):
        fields = line.split()
        if len(fields) != dim + 1:
            raise EmbeddingError(f"{path}:{lineno}: expected {dim} floats after the token")
        token = fields[0]
        if token in table:
            raise EmbeddingError(f"{path}:{lineno}: duplicate token {token!r}")
        try:
            vec = np.array([float(x) for x in fields[1:]])
        except ValueError:
            raise EmbeddingError(f"{path}:{lineno}: malformed float") from None
        if not np.all(np.isfinite(vec)):
            raise EmbeddingError(f"{path}:{lineno}: non-finite component")
        table[token] = vec
    return StaticTableBackend(dim, table)


def hash_backend(dim: int, seed: int = 0) -> HashBackend:
    return HashBackend(dim, seed)


def load_precomputed_store(path) -> PrecomputedBackend:
    """Load per-sequence contextual vectors from JSON-Lines {id, vectors}."""
    store: dict = {}
    dim = None
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EmbeddingError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from None
            if "id" not in obj or "vectors" not in obj:
                raise EmbeddingError(f"{path}:{lineno}: expected keys id, vectors")
            seq_id = str(obj["id"])
            if seq_id in store:
                raise EmbeddingError(f"{path}:{lineno}: duplicate id {seq_id!r}")
            arr = np.array(obj["vectors"], dtype=float)
            if arr.size and not np.all(np.isfinite(arr)):
                raise EmbeddingError(f"{path}:{lineno}: non-finite component")
            if arr.ndim == 2:
                if dim is None:
                    dim = arr.shape[1]
                elif arr.shape[1] != dim:
                    raise EmbeddingError(
                        f"{path}:{lineno}: dimension {arr.shape[1]} != {dim}"
                    )
            elif len(obj["vectors"]) != 0:
                raise EmbeddingError(f"{path}:{lineno}: vectors must be a list of rows")
            store[seq_id] = arr
    if dim is None:
        raise EmbeddingError(f"{path}: cannot infer dimension (no non-empty sequence)")
    # Re-shape empty sequences now that the dimension is known.
    for seq_id, arr in store.items():
        if arr.size == 0:
            store[seq_id] = np.zeros((0, dim))
    return PrecomputedBackend(dim, store)


def embed_sequence(
    backend: EmbeddingBackend, tokens, seq_id: str | None = None
) -> np.ndarray:
    """One vector per token, order preserved; shape (len(tokens), backend.dim)."""
    toks = tokens.tokens if isinstance(tokens, TokenSequence) else tuple(tokens)
    out = backend.vectors(toks, seq_id=seq_id)
    if out.shape != (len(toks), backend.dim):
        raise EmbeddingError(f"backend returned shape {out.shape}, expected ({len(toks)}, {backend.dim})")
    return out


class FrequencyBaselinePredictor:
    """Predicts the globally most frequent corpus token at every mask."""

    kind = "frequency_baseline"

    def __init__(self, most_frequent: str):
        self.most_frequent = most_frequent

    @classmethod
    def from_token_sequences(cls, sequences: Iterable) -> "FrequencyBaselinePredictor":
        counts: Counter = Counter()
        for seq in sequences:
            counts.update(seq.tokens if isinstance(seq, TokenSequence) else seq)
        if not counts:
            raise PredictionError("no tokens to build the frequency baseline from")
        # Ties resolve to the lexicographically smallest token.
        best = min(counts.items(), key=lambda item: (-item[1], item[0]))
        return cls(best[0])

    @classmethod
    def from_corpus(cls, corpus: Corpus, tokenizer: Callable = tokenize):
        return cls.from_token_sequences(tokenizer(rec.question) for rec in corpus)

    def predict(self, masked: MaskedSentence) -> list:
        return [(pos, self.most_frequent) for pos, _ in masked.gold]


class ExternalPredictor:
    """Predictions keyed by (sentence id, mask position), loaded from a file."""

    kind = "external_file"

    def __init__(self, table: dict):
        self._table = table

    def predict(self, masked: MaskedSentence) -> list:
        out = []
        for pos, _ in masked.gold:
            key = (masked.sentence_id, pos)
            if key not in self._table:
                raise PredictionError(
                    f"no prediction for sentence {masked.sentence_id!r} position {pos}"
                )
            out.append((pos, self._table[key]))
        return out


def load_mlm_predictions(path) -> ExternalPredictor:
    """Load JSON-Lines {sentence_id, position, token}."""
    table: dict = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise PredictionError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from None
            for key in ("sentence_id", "position", "token"):
                if key not in obj:
                    raise PredictionError(f"{path}:{lineno}: missing key {key!r}")
            table[(str(obj["sentence_id"]), int(obj["position"]))] = str(obj["token"])
    return ExternalPredictor(table)


def mlm_predict(predictor, masked: MaskedSentence) -> list:
    """One (position, predicted token) per mask."""
    return predictor.predict(masked)
