"""Metrics and evaluation protocols: R@k, MRR, graded judgment accuracy,
classification metrics, fill-in-the-blank accuracy, and the noise sweep."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable, Sequence

import numpy as np

from .corpus import inject_noise
from .textnorm import tokenize

GRADES = ("similar_question", "similar_topic", "different_topic")
_GRADE_SCORE = {"similar_question": 1.0, "similar_topic": 0.5, "different_topic": 0.0}

MRR_CUTOFF = 100


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class RankOutcome:
    query_id: str
    rank: int | None  # 1-based; None when the prime item was not retrieved

    def __post_init__(self):
        if self.rank is not None and self.rank < 1:
            raise EvalError(f"rank must be >= 1, got {self.rank}")


@dataclass(frozen=True)
class JudgmentLabel:
    query_id: str
    grade: str

    def __post_init__(self):
        if self.grade not in GRADES:
            raise EvalError(f"unknown grade {self.grade!r}")


def recall_at_k(outcomes: Sequence, k: int) -> float:
    """Fraction of outcomes whose rank is <= k."""
    if k < 1:
        raise EvalError("k must be >= 1")
    if not outcomes:
        raise EvalError("no outcomes")
    hits = sum(1 for o in outcomes if o.rank is not None and o.rank <= k)
    return hits / len(outcomes)


def mrr(outcomes: Sequence, cutoff: int = MRR_CUTOFF) -> float:
    """Mean of 1/rank for ranks within the cutoff, 0 otherwise."""
    if not outcomes:
        raise EvalError("no outcomes")
    total = sum(
        1.0 / o.rank for o in outcomes if o.rank is not None and o.rank <= cutoff
    )
    return total / len(outcomes)


def judgment_accuracy(labels: Sequence) -> tuple:
    """(graded %, rigid %): graded scores {1, 0.5, 0}; rigid counts only
    `similar_question` as correct."""
    if not labels:
        raise EvalError("no judgment labels")
    graded = 100.0 * sum(_GRADE_SCORE[lab.grade] for lab in labels) / len(labels)
    rigid = 100.0 * sum(1 for lab in labels if lab.grade == "similar_question") / len(labels)
    return graded, rigid


def classification_metrics(
    predictions: Sequence, golds: Sequence, num_classes: int
) -> tuple:
    """(macro precision, macro recall, macro F1, accuracy) with the
    0-convention when a per-class denominator is 0."""
    if len(predictions) != len(golds):
        raise EvalError(f"{len(predictions)} predictions for {len(golds)} golds")
    if not predictions:
        raise EvalError("no predictions")
    for value in list(predictions) + list(golds):
        if not 0 <= value < num_classes:
            raise EvalError(f"label {value} out of range for {num_classes} classes")
    precisions = []
    recalls = []
    f1s = []
    for cls in range(num_classes):
        tp = sum(1 for p, g in zip(predictions, golds) if p == cls and g == cls)
        fp = sum(1 for p, g in zip(predictions, golds) if p == cls and g != cls)
        fn = sum(1 for p, g in zip(predictions, golds) if p != cls and g == cls)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        precisions.append(prec)
        recalls.append(rec)
        f1s.append(f1)
    accuracy = sum(1 for p, g in zip(predictions, golds) if p == g) / len(golds)
    n = num_classes
    return sum(precisions) / n, sum(recalls) / n, sum(f1s) / n, accuracy


def fill_blank_accuracy(
    predictions: Sequence,
    masked_set: Sequence,
    normalizer: Callable | None = None,
) -> float:
    """Percentage of masks whose predicted token exactly matches the gold one
    (both sides run through `normalizer` when given)."""
    if len(predictions) != len(masked_set):
        raise EvalError(f"{len(predictions)} prediction lists for {len(masked_set)} sentences")
    norm = normalizer if normalizer is not None else (lambda s: s)
    total = 0
    correct = 0
    for preds, masked in zip(predictions, masked_set):
        if len(preds) != len(masked.gold):
            raise EvalError(
                f"sentence {masked.sentence_id!r}: {len(preds)} predictions for "
                f"{len(masked.gold)} masks"
            )
        gold_by_pos = dict(masked.gold)
        for pos, token in preds:
            if pos not in gold_by_pos:
                raise EvalError(f"sentence {masked.sentence_id!r}: no mask at position {pos}")
            total += 1
            if norm(token) == norm(gold_by_pos[pos]):
                correct += 1
    return 100.0 * correct / total


def noise_sweep(
    sample: Sequence,
    search_fn: Callable,
    vocab: Sequence,
    noise_grid: Sequence,
    seed: int = 0,
    tokenizer: Callable = tokenize,
) -> list:
    """R@1 per noise level: every sampled question is corrupted by
    inject_noise and must retrieve its own id at rank 1.

    `search_fn` maps a TokenSequence to a ranked list of (id, score).
    Returns [(m, r_at_1)] in grid order.
    """
    if not sample:
        raise EvalError("empty sample")
    for m in noise_grid:
        if not 0 <= m <= 1:
            raise EvalError(f"noise level {m} outside [0, 1]")
    master = np.random.default_rng(seed)
    child_seeds = master.integers(0, 2**63 - 1, size=(len(noise_grid), len(sample)))
    rows = []
    for mi, m in enumerate(noise_grid):
        outcomes = []
        for ri, rec in enumerate(sample):
            tokens = tokenizer(rec.question)
            noised = inject_noise(tokens, m, vocab, seed=int(child_seeds[mi, ri]))
            hits = search_fn(noised)
            rank = None
            for position, (hit_id, _) in enumerate(hits, start=1):
                if hit_id == rec.id:
                    rank = position
                    break
            outcomes.append(RankOutcome(rec.id, rank))
        rows.append((float(m), recall_at_k(outcomes, 1)))
    return rows


@dataclass
class EvalReport:
    """Metric table plus the configuration and seed that produced it.

    Serialized forms carry only {metrics, config, seed} so reruns are
    byte-identical; the timestamp stays in memory.
    """

    metrics: dict
    config: dict
    seed: int
    timestamp: str = field(
        default_factory=lambda: datetime.now(timezone.utc).isoformat()
    )

    def to_json(self) -> str:
        return json.dumps(
            {"metrics": self.metrics, "config": self.config, "seed": self.seed},
            ensure_ascii=False,
        )

    def to_text(self) -> str:
        names = list(self.metrics)
        values = [f"{self.metrics[name]:.4f}" for name in names]
        widths = [max(len(n), len(v)) for n, v in zip(names, values)]
        header = "  ".join(n.ljust(w) for n, w in zip(names, widths))
        row = "  ".join(v.rjust(w) for v, w in zip(values, widths))
        return f"{header}\n{row}"


def load_judgment_labels(path) -> list:
    """JSON-Lines {query_id, grade}; one label per query."""
    labels = []
    seen = set()
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EvalError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from None
            if "query_id" not in obj or "grade" not in obj:
                raise EvalError(f"{path}:{lineno}: expected keys query_id, grade")
            qid = str(obj["query_id"])
            if qid in seen:
                raise EvalError(f"{path}:{lineno}: duplicate label for query {qid!r}")
            seen.add(qid)
            try:
                labels.append(JudgmentLabel(qid, str(obj["grade"])))
            except EvalError as exc:
                raise EvalError(f"{path}:{lineno}: {exc}") from None
    return labels
