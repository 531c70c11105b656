"""QA corpus ingestion and the derived data sets used by the evaluation protocols."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from .textnorm import MASK_TOKEN, TokenSequence, tokenize

STYLES = ("formal", "informal", "unknown")


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class QARecord:
    id: str
    question: str
    answer: str
    category: str
    source: str
    style: str = "unknown"

    def __post_init__(self):
        if not self.question:
            raise CorpusError(f"record {self.id!r}: empty question")
        if self.style not in STYLES:
            raise CorpusError(f"record {self.id!r}: invalid style {self.style!r}")


@dataclass(frozen=True)
class LabeledExample:
    text: str
    label: int
    origin_id: str


@dataclass(frozen=True)
class ParaphrasePair:
    prime_id: str
    paraphrase: str


@dataclass(frozen=True)
class MaskedSentence:
    """Token sequence with `[MASK]` sentinels and the original tokens as gold."""

    tokens: TokenSequence
    gold: tuple
    sentence_id: str = ""

    def __post_init__(self):
        if not self.gold:
            raise CorpusError("masked sentence must contain at least one mask")
        positions = [pos for pos, _ in self.gold]
        if len(set(positions)) != len(positions):
            raise CorpusError("duplicate mask positions")
        for pos in positions:
            if not 0 <= pos < len(self.tokens):
                raise CorpusError(f"mask position {pos} out of bounds")


class Corpus:
    """Immutable collection of QARecord with unique ids."""

    def __init__(self, records: Sequence[QARecord]):
        by_id: dict = {}
        for rec in records:
            if rec.id in by_id:
                raise CorpusError(f"duplicate id {rec.id!r}")
            by_id[rec.id] = rec
        self._records = tuple(records)
        self._by_id = by_id

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[QARecord]:
        return iter(self._records)

    def __contains__(self, record_id: str) -> bool:
        return record_id in self._by_id

    def __getitem__(self, record_id: str) -> QARecord:
        return self._by_id[record_id]

    @property
    def records(self) -> tuple:
        return self._records


_REQUIRED_KEYS = ("id", "question", "answer", "category", "source")


def load_qa_corpus(path) -> Corpus:
    """Load a JSON-Lines corpus; one object per line with keys
    id, question, answer, category, source and optional style."""
    records = []
    seen = set()
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise CorpusError(f"{path}:{lineno}: expected a JSON object")
            for key in _REQUIRED_KEYS:
                if key not in obj:
                    raise CorpusError(f"{path}:{lineno}: missing key {key!r}")
            if obj["id"] in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate id {obj['id']!r}")
            seen.add(obj["id"])
            try:
                records.append(
                    QARecord(
                        id=str(obj["id"]),
                        question=str(obj["question"]),
                        answer=str(obj["answer"]),
                        category=str(obj["category"]),
                        source=str(obj["source"]),
                        style=str(obj.get("style", "unknown")),
                    )
                )
            except CorpusError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from None
    return Corpus(records)


def length_stats(corpus: Corpus, tokenizer: Callable = tokenize) -> tuple:
    """Mean and population standard deviation of question token counts."""
    if len(corpus) == 0:
        raise CorpusError("empty corpus")
    lengths = np.array([len(tokenizer(rec.question)) for rec in corpus], dtype=float)
    return float(lengths.mean()), float(lengths.std())


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def build_qc_dataset(
    corpus: Corpus,
    target_category: str,
    n_pos: int = 1000,
    n_neg: int = 3400,
    seed: int = 0,
) -> list:
    """Sample n_pos positives from the target category (label 1) and n_neg
    negatives from the rest (label 0), both without replacement, then shuffle."""
    positives = [rec for rec in corpus if rec.category == target_category]
    negatives = [rec for rec in corpus if rec.category != target_category]
    if len(positives) < n_pos:
        raise CorpusError(
            f"need {n_pos} records of category {target_category!r}, have {len(positives)}"
        )
    if len(negatives) < n_neg:
        raise CorpusError(f"need {n_neg} records outside {target_category!r}, have {len(negatives)}")
    rng = np.random.default_rng(seed)
    chosen_pos = rng.choice(len(positives), size=n_pos, replace=False)
    chosen_neg = rng.choice(len(negatives), size=n_neg, replace=False)
    examples = [
        LabeledExample(positives[i].question, 1, positives[i].id) for i in chosen_pos
    ] + [LabeledExample(negatives[i].question, 0, negatives[i].id) for i in chosen_neg]
    order = rng.permutation(len(examples))
    return [examples[i] for i in order]


def split_dataset(examples: Sequence, fractions: tuple, seed: int = 0) -> tuple:
    """Seeded shuffle, then contiguous (train, valid, test) split.

    Test and validation sizes are round-half-up of n*fraction; train takes
    the remainder.
    """
    f_train, f_valid, f_test = fractions
    if min(f_train, f_valid, f_test) < 0:
        raise CorpusError("fractions must be non-negative")
    if abs(f_train + f_valid + f_test - 1.0) > 1e-9:
        raise CorpusError("fractions must sum to 1")
    n = len(examples)
    n_test = _round_half_up(n * f_test)
    n_valid = _round_half_up(n * f_valid)
    n_train = n - n_test - n_valid
    for count, frac, name in ((n_train, f_train, "train"), (n_valid, f_valid, "valid"), (n_test, f_test, "test")):
        if frac > 0 and count <= 0:
            raise CorpusError(f"{name} split is empty (n={n}, fraction={frac})")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    shuffled = [examples[i] for i in order]
    train = shuffled[:n_train]
    valid = shuffled[n_train : n_train + n_valid]
    test = shuffled[n_train + n_valid :]
    return train, valid, test


def inject_noise(
    tokens: TokenSequence, m: float, vocab: Sequence, seed: int = 0
) -> TokenSequence:
    """Replace round-half-up(m*len) distinct positions (at least 1 when m > 0)
    with random vocabulary tokens that differ from the originals."""
    if not 0 <= m <= 1:
        raise CorpusError(f"noise fraction {m} outside [0, 1]")
    n = len(tokens)
    k = _round_half_up(m * n)
    if m > 0 and n >= 1:
        k = max(1, k)
    if k == 0:
        return tokens
    if len(set(vocab)) < 2:
        raise CorpusError("vocabulary must contain at least 2 distinct tokens")
    rng = np.random.default_rng(seed)
    positions = sorted(int(p) for p in rng.choice(n, size=k, replace=False))
    replacements = {}
    for pos in positions:
        original = tokens.tokens[pos]
        candidate = vocab[int(rng.integers(0, len(vocab)))]
        while candidate == original:
            candidate = vocab[int(rng.integers(0, len(vocab)))]
        replacements[pos] = candidate
    return tokens.replaced(replacements)


def mask_tokens(
    tokens: TokenSequence, rate: float, seed: int = 0, sentence_id: str = ""
) -> MaskedSentence:
    """Mask max(1, round-half-up(rate*len)) distinct positions with `[MASK]`."""
    if not 0 < rate <= 1:
        raise CorpusError(f"mask rate {rate} outside (0, 1]")
    n = len(tokens)
    if n == 0:
        raise CorpusError("cannot mask an empty sentence")
    k = max(1, _round_half_up(rate * n))
    rng = np.random.default_rng(seed)
    positions = sorted(int(p) for p in rng.choice(n, size=k, replace=False))
    gold = tuple((pos, tokens.tokens[pos]) for pos in positions)
    masked = tokens.replaced({pos: MASK_TOKEN for pos in positions})
    return MaskedSentence(masked, gold, sentence_id)


def load_labeled_examples(path) -> list:
    """Load JSON-Lines {text, label, origin_id?} classification examples."""
    examples = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from None
            if "text" not in obj or "label" not in obj:
                raise CorpusError(f"{path}:{lineno}: expected keys text, label")
            label = obj["label"]
            if not isinstance(label, int) or label < 0:
                raise CorpusError(f"{path}:{lineno}: label must be a non-negative integer")
            examples.append(
                LabeledExample(str(obj["text"]), label, str(obj.get("origin_id", "")))
            )
    return examples


def load_paraphrase_pairs(path, corpus: Corpus) -> list:
    """Load JSON-Lines {prime_id, paraphrase}; every prime_id must exist."""
    pairs = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from None
            if "prime_id" not in obj or "paraphrase" not in obj:
                raise CorpusError(f"{path}:{lineno}: expected keys prime_id, paraphrase")
            prime_id = str(obj["prime_id"])
            if prime_id not in corpus:
                raise CorpusError(f"{path}:{lineno}: unknown prime_id {prime_id!r}")
            pairs.append(ParaphrasePair(prime_id, str(obj["paraphrase"])))
    return pairs
