import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from medqr.corpus import Corpus, QARecord, mask_tokens
from medqr.embed import hash_backend
from medqr.evalkit import (
    EvalError,
    EvalReport,
    JudgmentLabel,
    RankOutcome,
    classification_metrics,
    fill_blank_accuracy,
    judgment_accuracy,
    load_judgment_labels,
    mrr,
    noise_sweep,
    recall_at_k,
)
from medqr.represent import PoolingSpec, represent
from medqr.retrieve import build_dense_index, dense_search
from medqr.textnorm import tokenize

ranks_strategy = st.lists(
    st.one_of(st.none(), st.integers(min_value=1, max_value=200)), min_size=1, max_size=50
)


def _outcomes(ranks):
    return [RankOutcome(f"q{i}", r) for i, r in enumerate(ranks)]


class TestRecallAtK:
    def test_hand_example(self):
        outcomes = _outcomes([1, 3, None])
        assert recall_at_k(outcomes, 1) == pytest.approx(1 / 3)
        assert recall_at_k(outcomes, 5) == pytest.approx(2 / 3)

    def test_all_rank_one(self):
        assert recall_at_k(_outcomes([1, 1, 1]), 1) == 1.0

    def test_empty_rejected(self):
        with pytest.raises(EvalError):
            recall_at_k([], 1)

    @settings(max_examples=100)
    @given(ranks_strategy, st.integers(min_value=1, max_value=100))
    def test_monotone_in_k(self, ranks, k):
        outcomes = _outcomes(ranks)
        assert recall_at_k(outcomes, k) <= recall_at_k(outcomes, k + 1)
        assert 0.0 <= recall_at_k(outcomes, k) <= 1.0


class TestMrr:
    def test_hand_example(self):
        assert mrr(_outcomes([1, 3, 12])) == (1 + 1 / 3 + 1 / 12) / 3

    def test_all_not_found(self):
        assert mrr(_outcomes([None, None])) == 0.0

    def test_rank_beyond_cutoff_contributes_zero(self):
        assert mrr(_outcomes([101]), cutoff=100) == 0.0

    @settings(max_examples=100)
    @given(ranks_strategy)
    def test_lower_bounded_by_recall_over_cutoff(self, ranks):
        outcomes = _outcomes(ranks)
        cutoff = 100
        assert mrr(outcomes, cutoff) >= recall_at_k(outcomes, cutoff) / cutoff - 1e-12
        assert 0.0 <= mrr(outcomes, cutoff) <= 1.0


class TestMrrCutoffDefault:
    def test_default_cutoff_is_one_hundred(self):
        from medqr.evalkit import MRR_CUTOFF

        assert MRR_CUTOFF == 100


class TestJudgmentAccuracy:
    def test_hand_example(self):
        labels = [
            JudgmentLabel("a", "similar_question"),
            JudgmentLabel("b", "similar_topic"),
            JudgmentLabel("c", "different_topic"),
            JudgmentLabel("d", "similar_question"),
        ]
        graded, rigid = judgment_accuracy(labels)
        assert graded == 62.5
        assert rigid == 50.0

    def test_all_similar_questions(self):
        labels = [JudgmentLabel(str(i), "similar_question") for i in range(3)]
        assert judgment_accuracy(labels) == (100.0, 100.0)

    def test_unknown_grade_rejected(self):
        with pytest.raises(EvalError):
            JudgmentLabel("x", "meh")

    @settings(max_examples=100)
    @given(st.lists(st.sampled_from(("similar_question", "similar_topic", "different_topic")), min_size=1, max_size=40))
    def test_graded_at_least_rigid(self, grades):
        labels = [JudgmentLabel(str(i), g) for i, g in enumerate(grades)]
        graded, rigid = judgment_accuracy(labels)
        assert graded >= rigid - 1e-12


class TestClassificationMetrics:
    def test_balanced_binary_confusion(self):
        # TP=1, FP=1, FN=1, TN=1
        precision, recall, macro_f1, accuracy = classification_metrics(
            [1, 1, 0, 0], [1, 0, 1, 0], 2
        )
        assert (precision, recall, macro_f1, accuracy) == (0.5, 0.5, 0.5, 0.5)

    def test_perfect_predictions(self):
        assert classification_metrics([0, 1, 2], [0, 1, 2], 3) == (1.0, 1.0, 1.0, 1.0)

    def test_absent_class_zero_convention(self):
        # class 2 never predicted nor gold: its P/R/F1 are all 0
        precision, recall, macro_f1, accuracy = classification_metrics(
            [0, 1, 0, 1], [0, 1, 0, 1], 3
        )
        assert accuracy == 1.0
        assert macro_f1 == pytest.approx(2 / 3)
        assert precision == pytest.approx(2 / 3)

    def test_length_mismatch(self):
        with pytest.raises(EvalError):
            classification_metrics([0], [0, 1], 2)

    def test_accuracy_equals_micro_recall(self):
        rng = np.random.default_rng(0)
        preds = [int(x) for x in rng.integers(0, 3, size=60)]
        golds = [int(x) for x in rng.integers(0, 3, size=60)]
        _, _, _, accuracy = classification_metrics(preds, golds, 3)
        micro_recall = sum(p == g for p, g in zip(preds, golds)) / 60
        assert accuracy == micro_recall


class TestFillBlankAccuracy:
    def _masked(self, text, rate, seed, sid=""):
        return mask_tokens(tokenize(text), rate, seed=seed, sentence_id=sid)

    def test_two_of_three(self):
        masked = [self._masked("aa bb cc dd ee ff", 0.5, seed=0)]
        gold = list(masked[0].gold)
        preds = [[(gold[0][0], gold[0][1]), (gold[1][0], gold[1][1]), (gold[2][0], "wrong")]]
        assert fill_blank_accuracy(preds, masked) == pytest.approx(66.67, abs=0.01)

    def test_oracle_echo_scores_hundred(self):
        masked = [self._masked("aa bb cc", 0.4, seed=1), self._masked("dd ee", 0.5, seed=2)]
        preds = [list(m.gold) for m in masked]
        assert fill_blank_accuracy(preds, masked) == 100.0

    def test_count_mismatch_rejected(self):
        masked = [self._masked("aa bb cc dd", 0.5, seed=0)]
        with pytest.raises(EvalError, match="predictions"):
            fill_blank_accuracy([[(0, "aa")]], masked)

    def test_normalizer_applied_to_both_sides(self):
        masked = [self._masked("كم aa", 0.5, seed=0)]
        preds = []
        for pos, gold in masked[0].gold:
            preds.append((pos, gold.replace("ك", "ک")))  # Persian kaf form
        acc = fill_blank_accuracy(
            [preds], masked, normalizer=lambda s: s.replace("ك", "ک")
        )
        assert acc == 100.0


def _dense_setup(n=30, dim=24, seed=0):
    rng = np.random.default_rng(seed)
    vocab = [f"word{i}" for i in range(80)]
    records = []
    for i in range(n):
        toks = list(rng.choice(len(vocab), size=8, replace=False))
        question = " ".join(vocab[t] for t in toks) + f" uniq{i}"
        records.append(QARecord(f"r{i:03d}", question, "a", "c", "s"))
    corpus = Corpus(records)
    backend = hash_backend(dim, seed=0)
    spec = PoolingSpec("all")
    index = build_dense_index(corpus, spec, backend)

    def search(tokens):
        rep = represent(tokens, spec, backend)
        return dense_search(index, rep.vector, 1)

    return corpus, search, vocab


class TestNoiseSweep:
    def test_zero_noise_gives_perfect_recall(self):
        corpus, search, vocab = _dense_setup()
        rows = noise_sweep(corpus.records, search, vocab, [0.0], seed=0)
        assert rows == [(0.0, 1.0)]

    def test_one_row_per_grid_value(self):
        corpus, search, vocab = _dense_setup(n=10)
        grid = [0.1, 0.2, 0.5]
        rows = noise_sweep(corpus.records[:5], search, vocab, grid, seed=0)
        assert [m for m, _ in rows] == grid

    def test_deterministic_under_seed(self):
        corpus, search, vocab = _dense_setup(n=12)
        first = noise_sweep(corpus.records[:6], search, vocab, [0.3], seed=4)
        second = noise_sweep(corpus.records[:6], search, vocab, [0.3], seed=4)
        assert first == second

    def test_bad_grid_value(self):
        corpus, search, vocab = _dense_setup(n=4)
        with pytest.raises(EvalError):
            noise_sweep(corpus.records, search, vocab, [1.5], seed=0)


class TestEvalReport:
    def test_json_shape(self):
        report = EvalReport({"R@1": 0.5}, {"seed_note": 1}, seed=3)
        payload = json.loads(report.to_json())
        assert set(payload) == {"metrics", "config", "seed"}
        assert payload["seed"] == 3

    def test_text_table_lists_metric_columns(self):
        report = EvalReport({"R@1": 0.5, "R@5": 0.75}, {}, seed=0)
        header, row = report.to_text().splitlines()
        assert header.split() == ["R@1", "R@5"]
        assert row.split() == ["0.5000", "0.7500"]

    def test_timestamp_not_serialized(self):
        report = EvalReport({"x": 1.0}, {}, seed=0)
        assert "timestamp" not in report.to_json()
        assert report.timestamp  # still available in memory


class TestJudgmentLoader:
    def test_load(self, write_jsonl):
        path = write_jsonl(
            "j.jsonl",
            [
                {"query_id": "a", "grade": "similar_question"},
                {"query_id": "b", "grade": "different_topic"},
            ],
        )
        labels = load_judgment_labels(path)
        assert [lab.grade for lab in labels] == ["similar_question", "different_topic"]

    def test_duplicate_query_rejected(self, write_jsonl):
        path = write_jsonl(
            "j.jsonl",
            [
                {"query_id": "a", "grade": "similar_question"},
                {"query_id": "a", "grade": "similar_topic"},
            ],
        )
        with pytest.raises(EvalError, match="duplicate"):
            load_judgment_labels(path)
