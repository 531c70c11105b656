import math

import numpy as np
import pytest

from medqr.corpus import Corpus, QARecord
from medqr.embed import embed_sequence, hash_backend
from medqr.represent import (
    KeyphraseSpan,
    PoolingSpec,
    RepresentError,
    build_keyphrase_sequence,
    corpus_stats,
    extract_keyphrases,
    represent,
)
from medqr.textnorm import SEP_TOKEN, TokenSequence, tokenize


def _corpus(questions):
    return Corpus([QARecord(f"r{i}", q, "a", "c", "s") for i, q in enumerate(questions)])


@pytest.fixture(scope="module")
def toy_stats():
    return corpus_stats(_corpus(["a b a", "b c", "c c d"]))


class TestCorpusStats:
    def test_document_frequencies(self, toy_stats):
        assert toy_stats.df == {"a": 1, "b": 2, "c": 2, "d": 1}

    def test_smoothed_idf(self, toy_stats):
        assert toy_stats.idf["a"] == pytest.approx(math.log(4 / 2) + 1, abs=1e-12)
        assert toy_stats.idf["b"] == pytest.approx(math.log(4 / 3) + 1, abs=1e-12)

    def test_singleton_corpus(self):
        stats = corpus_stats(_corpus(["x"]))
        assert stats.df == {"x": 1}
        assert stats.idf["x"] == pytest.approx(1.0)
        assert stats.avgdl == 1.0

    def test_unseen_token_idf(self, toy_stats):
        assert toy_stats.idf_of("zzz") == pytest.approx(math.log(4) + 1)

    def test_empty_corpus(self):
        with pytest.raises(RepresentError):
            corpus_stats(Corpus([]))


class TestExtractKeyphrases:
    def test_worked_example(self, toy_stats):
        spans = extract_keyphrases(tokenize("a b a c"), toy_stats, n=2)
        assert [(s.start, s.end) for s in spans] == [(0, 1), (1, 2)]
        assert spans[0].score == pytest.approx(2 * (math.log(2) + 1))
        assert spans[1].score == pytest.approx(math.log(4 / 3) + 1)

    def test_saturation(self, toy_stats):
        spans = extract_keyphrases(tokenize("a b"), toy_stats, n=10)
        assert len(spans) == 2

    def test_all_stopwords_gives_empty(self, toy_stats):
        spans = extract_keyphrases(tokenize("a b"), toy_stats, n=3, stopwords=frozenset({"a", "b"}))
        assert spans == []

    def test_selected_dominate_unselected(self, toy_stats):
        tokens = tokenize("a b a c d d d")
        selected = extract_keyphrases(tokens, toy_stats, n=2)
        everyone = extract_keyphrases(tokens, toy_stats, n=100)
        rejected = {s.start for s in everyone} - {s.start for s in selected}
        min_selected = min(s.score for s in selected)
        for span in everyone:
            if span.start in rejected:
                assert span.score <= min_selected
        assert all(s.score >= 0 for s in everyone)


class TestBuildKeyphraseSequence:
    def _tokens(self, n):
        return TokenSequence(tuple(f"w{chr(97 + i)}" for i in range(n)))

    def test_single_span_with_context(self):
        seq, mask = build_keyphrase_sequence(self._tokens(7), [KeyphraseSpan(2, 3, 1.0)], 2)
        assert seq.tokens == ("wa", "wb", "wc", "wd", "we")
        assert mask == [False, False, True, False, False]

    def test_two_regions_one_separator(self):
        seq, mask = build_keyphrase_sequence(
            self._tokens(7), [KeyphraseSpan(0, 1, 1.0), KeyphraseSpan(5, 6, 1.0)], 2
        )
        assert seq.tokens == ("wa", "wb", "wc", SEP_TOKEN, "wd", "we", "wf", "wg")
        assert [i for i, flag in enumerate(mask) if flag] == [0, 6]

    def test_window_zero_full_span_is_identity(self):
        tokens = self._tokens(5)
        seq, mask = build_keyphrase_sequence(tokens, [KeyphraseSpan(0, 5, 1.0)], 0)
        assert seq.tokens == tokens.tokens
        assert all(mask)

    def test_overlapping_regions_merge_without_duplication(self):
        seq, mask = build_keyphrase_sequence(
            self._tokens(5), [KeyphraseSpan(0, 1, 1.0), KeyphraseSpan(2, 3, 1.0)], 2
        )
        assert seq.tokens == ("wa", "wb", "wc", "wd", "we")
        assert mask == [True, False, True, False, False]

    def test_rejects_overlapping_input_spans(self):
        with pytest.raises(RepresentError, match="disjoint"):
            build_keyphrase_sequence(
                self._tokens(5), [KeyphraseSpan(0, 2, 1.0), KeyphraseSpan(1, 3, 1.0)], 0
            )


class TestRepresent:
    def test_all_is_mean(self):
        backend = hash_backend(8, seed=0)
        tokens = tokenize("xx yy")
        rep = represent(tokens, PoolingSpec("all"), backend)
        expected = embed_sequence(backend, tokens).mean(axis=0)
        np.testing.assert_allclose(rep.vector, expected, atol=0)

    def test_rsw_single_survivor(self):
        backend = hash_backend(8, seed=0)
        rep = represent(
            tokenize("xx yy"), PoolingSpec("rsw"), backend, stopwords=frozenset({"yy"})
        )
        np.testing.assert_allclose(rep.vector, embed_sequence(backend, ("xx",))[0])

    def test_rsw_empty_stopwords_equals_all(self):
        backend = hash_backend(16, seed=1)
        tokens = tokenize("aa bb cc aa")
        all_rep = represent(tokens, PoolingSpec("all"), backend)
        rsw_rep = represent(tokens, PoolingSpec("rsw"), backend, stopwords=frozenset())
        np.testing.assert_allclose(rsw_rep.vector, all_rep.vector, atol=1e-12)

    def test_rsw_all_stopwords_falls_back_to_all(self):
        backend = hash_backend(8, seed=0)
        tokens = tokenize("aa bb")
        fallback = represent(tokens, PoolingSpec("rsw"), backend, stopwords=frozenset({"aa", "bb"}))
        all_rep = represent(tokens, PoolingSpec("all"), backend)
        np.testing.assert_array_equal(fallback.vector, all_rep.vector)

    def test_kw_rcnt_full_coverage_window_zero_equals_all(self, toy_stats):
        backend = hash_backend(12, seed=2)
        tokens = tokenize("aa bb cc dd")  # pairwise distinct tokens
        spec = PoolingSpec("kw_rcnt", n_keyphrases=10, context_window=0)
        rcnt = represent(tokens, spec, backend, toy_stats)
        all_rep = represent(tokens, PoolingSpec("all"), backend)
        np.testing.assert_allclose(rcnt.vector, all_rep.vector, atol=1e-12)

    def test_kw_and_kw_rcnt_share_the_sequence(self, toy_stats):
        backend = hash_backend(8, seed=3)
        tokens = tokenize("aa bb cc dd ee ff gg")
        spans = extract_keyphrases(tokens, toy_stats, 2)
        sequence, mask = build_keyphrase_sequence(tokens, spans, 2)
        vectors = embed_sequence(backend, sequence)
        kw = represent(tokens, PoolingSpec("kw", 2, 2), backend, toy_stats)
        rcnt = represent(tokens, PoolingSpec("kw_rcnt", 2, 2), backend, toy_stats)
        np.testing.assert_allclose(kw.vector, vectors.mean(axis=0))
        keep = [i for i, flag in enumerate(mask) if flag]
        np.testing.assert_allclose(rcnt.vector, vectors[keep].mean(axis=0))

    def test_kw_no_candidates_falls_back_to_all(self, toy_stats):
        backend = hash_backend(8, seed=0)
        tokens = tokenize("aa bb")
        spec = PoolingSpec("kw", 3, 2)
        fallback = represent(tokens, spec, backend, toy_stats, stopwords=frozenset({"aa", "bb"}))
        all_rep = represent(tokens, PoolingSpec("all"), backend)
        np.testing.assert_array_equal(fallback.vector, all_rep.vector)

    def test_kw_requires_stats(self):
        with pytest.raises(RepresentError, match="statistics"):
            represent(tokenize("aa"), PoolingSpec("kw"), hash_backend(4, 0))

    def test_empty_question_rejected(self):
        with pytest.raises(RepresentError, match="no tokens"):
            represent("", PoolingSpec("all"), hash_backend(4, 0))

    def test_dimension_matches_backend(self, toy_stats):
        backend = hash_backend(48, seed=0)
        for strategy in ("all", "rsw", "kw", "kw_rcnt"):
            rep = represent(tokenize("aa bb cc"), PoolingSpec(strategy), backend, toy_stats)
            assert rep.vector.shape == (48,)
            assert np.all(np.isfinite(rep.vector))

    def test_accepts_record_and_text(self):
        backend = hash_backend(8, seed=0)
        record = QARecord("idz", "aa bb", "x", "c", "s")
        from_record = represent(record, PoolingSpec("all"), backend)
        from_text = represent("aa bb", PoolingSpec("all"), backend)
        np.testing.assert_array_equal(from_record.vector, from_text.vector)
        assert from_record.source_id == "idz"

    def test_spec_defaults(self):
        spec = PoolingSpec("kw")
        assert spec.n_keyphrases == 5
        assert spec.context_window == 2

    def test_bad_strategy_rejected(self):
        with pytest.raises(RepresentError, match="strategy"):
            PoolingSpec("clever")
