import math
import random
from collections import Counter

import pytest

from reference_impl import (ref_idf_table, ref_predict,
                            ref_species_scores, ref_vector)
from soniclex import similarity
from soniclex.kb import KnowledgeBase, PatternDescription, PROV_FIXED_SEED
from soniclex.similarity import (EmptyKnowledgeBaseError, StaleIndexError,
                                 TermVector, aggregate_score, build_index,
                                 classify, cosine, species_scores, tokenize,
                                 vectorize, _vector_from_counts)


def make_kb(texts_by_species):
    kb = KnowledgeBase()
    i = 0
    for species, texts in texts_by_species.items():
        for text in texts:
            kb.commit(PatternDescription(id=f"p{i:03d}", text=text,
                                         species=species,
                                         provenance=PROV_FIXED_SEED))
            i += 1
    return kb


class TestTokenize:
    def test_stop_words_removed_before_ngrams(self):
        terms = tokenize("Vertical burst patterns at 2-8 kHz",
                         stop_words=frozenset({"at"}))
        unigrams = {"vertical", "burst", "patterns", "2-8", "khz"}
        bigrams = {"vertical burst", "burst patterns", "patterns 2-8", "2-8 khz"}
        trigrams = {"vertical burst patterns", "burst patterns 2-8",
                    "patterns 2-8 khz"}
        assert set(terms) == unigrams | bigrams | trigrams
        assert len(terms) == 12

    def test_empty_text(self):
        assert tokenize("") == []

    def test_case_folding_and_stop_removal(self):
        assert tokenize("THE the The", stop_words=frozenset({"the"})) == []

    def test_numbers_units_and_hyphens_survive(self):
        terms = tokenize("20 Hz pulse", stop_words=frozenset())
        assert "20" in terms and "hz" in terms and "20 hz" in terms


class TestIndex:
    def test_idf_two_identical_single_term_docs(self):
        kb = make_kb({"A": ["pulse", "pulse"]})
        index = build_index(kb, stop_words=frozenset())
        col = index.vocabulary["pulse"]
        assert index.idf[col] == pytest.approx(math.log(3 / 3) + 1.0)
        assert index.doc_count == 2

    def test_idf_term_in_one_of_three_docs(self):
        kb = make_kb({"A": ["pulse", "sweep", "sweep"]})
        index = build_index(kb, stop_words=frozenset())
        col = index.vocabulary["pulse"]
        assert index.idf[col] == pytest.approx(math.log(4 / 2) + 1.0)
        assert index.idf[col] == pytest.approx(1.6931, abs=1e-4)

    def test_all_idf_positive_and_vocabulary_covered(self):
        kb = make_kb({"A": ["low pulse train", "sweep band"],
                      "B": ["broadband burst"]})
        index = build_index(kb, stop_words=frozenset())
        assert set(index.idf) == set(index.vocabulary.values())
        assert all(v > 0 for v in index.idf.values())
        assert index.kb_revision == kb.revision

    def test_empty_kb_rejected(self):
        with pytest.raises(EmptyKnowledgeBaseError):
            build_index(KnowledgeBase())

    def test_idf_table_matches_oracle(self):
        kb = make_kb({
            "A": ["low pulse train at 20 hz", "sweeping whistle 2-8 khz",
                  "pulse pattern repeats"],
            "B": ["broadband clicks", "20 hz moan", "tonal band 1 khz",
                  "clicks with 50 ms gaps"],
            "C": ["upsweep 1-3 khz", "downsweep 3-1 khz", "pulse train"],
        })
        stop = frozenset({"at", "with"})
        index = build_index(kb, stop_words=stop)
        texts = [p.text for e in kb.entries.values() for p in e.patterns]
        oracle = ref_idf_table(texts, stop)
        assert set(oracle) == set(index.vocabulary)
        for term, idf in oracle.items():
            assert index.idf[index.vocabulary[term]] == pytest.approx(idf, abs=1e-9)


class TestVectorizeAndCosine:
    def test_corpus_document_self_similarity(self):
        kb = make_kb({"A": ["pulse train 20 hz", "sweep 2-8 khz"]})
        index = build_index(kb, stop_words=frozenset())
        v = vectorize(index, "pulse train 20 hz")
        assert v.norm > 0
        assert cosine(v, v) == pytest.approx(1.0)

    def test_norm_matches_recomputed_euclidean_length(self):
        kb = make_kb({"A": ["pulse train 20 hz pulse", "sweep 2-8 khz band"]})
        index = build_index(kb, stop_words=frozenset())
        for text in ("pulse train", "pulse pulse sweep band 20", "khz"):
            v = vectorize(index, text)
            recomputed = math.sqrt(sum(w * w for w in v.weights.values()))
            assert abs(v.norm - recomputed) <= 1e-9

    def test_all_oov_text_is_zero_vector(self):
        kb = make_kb({"A": ["pulse train"]})
        index = build_index(kb, stop_words=frozenset())
        v = vectorize(index, "completely different words")
        assert v.weights == {} and v.norm == 0.0
        assert cosine(v, vectorize(index, "pulse train")) == 0.0

    def test_identical_nonzero_vectors(self):
        a = TermVector(weights={0: 2.0, 3: 1.0}, norm=math.sqrt(5.0))
        assert cosine(a, a) == pytest.approx(1.0)

    def test_disjoint_support(self):
        a = TermVector(weights={0: 1.0}, norm=1.0)
        b = TermVector(weights={1: 1.0}, norm=1.0)
        assert cosine(a, b) == 0.0

    def test_closed_form_half_overlap(self):
        a = TermVector(weights={0: 1.0, 1: 1.0}, norm=math.sqrt(2.0))
        b = TermVector(weights={0: 1.0}, norm=1.0)
        assert cosine(a, b) == pytest.approx(1.0 / math.sqrt(2.0), abs=1e-12)

    def test_symmetry_and_range_on_random_vectors(self):
        rng = random.Random(7)
        for _ in range(200):
            a = TermVector(weights=(wa := {rng.randrange(12): rng.uniform(0, 5)
                                           for _ in range(rng.randrange(1, 8))}),
                           norm=math.sqrt(sum(w * w for w in wa.values())))
            b = TermVector(weights=(wb := {rng.randrange(12): rng.uniform(0, 5)
                                           for _ in range(rng.randrange(1, 8))}),
                           norm=math.sqrt(sum(w * w for w in wb.values())))
            assert cosine(a, b) == cosine(b, a)
            assert 0.0 <= cosine(a, b) <= 1.0

    def test_weights_match_oracle(self):
        kb = make_kb({"A": ["pulse pulse train", "sweep band khz"],
                      "B": ["broadband burst pulse"]})
        index = build_index(kb, stop_words=frozenset())
        texts = [p.text for e in kb.entries.values() for p in e.patterns]
        idf = ref_idf_table(texts, frozenset())
        query = "pulse pulse sweep unknown"
        got = vectorize(index, query)
        want = ref_vector(query, idf, frozenset())
        assert len(got.weights) == len(want)
        for term, weight in want.items():
            assert got.weights[index.vocabulary[term]] == pytest.approx(
                weight, abs=1e-9)

    def test_scaling_counts_leaves_cosine_unchanged(self):
        kb = make_kb({"A": ["pulse train 20 hz", "sweep 2-8 khz"]})
        index = build_index(kb, stop_words=frozenset())
        counts = Counter(tokenize("pulse train sweep", frozenset()))
        base = _vector_from_counts(index, counts)
        other = vectorize(index, "pulse train 20 hz")
        for k in (2, 7, 100):
            scaled = _vector_from_counts(
                index, {t: c * k for t, c in counts.items()})
            assert cosine(scaled, other) == pytest.approx(cosine(base, other),
                                                          abs=1e-12)


class TestSpeciesScores:
    def test_single_pattern_equal_to_query_scores_09(self):
        kb = make_kb({"A": ["pulse train 20 hz"], "B": ["sweep 4 khz"]})
        index = build_index(kb, stop_words=frozenset())
        scores = {s.species: s
                  for s in species_scores(index, kb, "pulse train 20 hz")}
        a = scores["A"]
        assert a.max_sim == pytest.approx(1.0)
        assert a.mean_sim == pytest.approx(1.0)
        assert a.diversity == 0.0
        assert a.total == pytest.approx(0.9, abs=1e-12)

    def test_aggregation_weights_pinned(self):
        assert aggregate_score(0.8, 0.5, 0.3) == pytest.approx(0.66, abs=1e-12)

    def test_max_never_below_mean(self):
        kb = make_kb({
            "A": ["pulse train 20 hz", "pulse burst", "sweeping whistle"],
            "B": ["tonal band", "broadband clicks"],
        })
        index = build_index(kb, stop_words=frozenset())
        for s in species_scores(index, kb, "pulse train whistle"):
            assert s.max_sim >= s.mean_sim - 1e-12

    def test_stale_index_rejected(self):
        kb = make_kb({"A": ["pulse"]})
        index = build_index(kb, stop_words=frozenset())
        kb.commit(PatternDescription(id="x", text="sweep", species="A",
                                     provenance=PROV_FIXED_SEED))
        with pytest.raises(StaleIndexError):
            species_scores(index, kb, "pulse")

    def test_three_species_toy_matches_oracle(self):
        texts = {
            "A": ["pulse train 20 hz", "pulse pattern low band"],
            "B": ["sweeping whistle 2-8 khz", "upsweep contour"],
            "C": ["broadband clicks 50 ms"],
        }
        kb = make_kb(texts)
        stop = frozenset({"at"})
        index = build_index(kb, stop_words=stop)
        query = "pulse whistle 20 hz"
        got = {s.species: s for s in species_scores(index, kb, query)}
        want = ref_species_scores(texts, query, stop)
        for species, (mx, mean, div, total) in want.items():
            assert got[species].max_sim == pytest.approx(mx, abs=1e-9)
            assert got[species].mean_sim == pytest.approx(mean, abs=1e-9)
            assert got[species].diversity == pytest.approx(div, abs=1e-9)
            assert got[species].total == pytest.approx(total, abs=1e-9)


class TestClassify:
    def test_only_matching_species_wins(self):
        kb = make_kb({"A": ["pulse train 20 hz"], "B": ["sweep contour khz"],
                      "C": ["broadband clicks"]})
        index = build_index(kb, stop_words=frozenset())
        result = classify(index, kb, "pulse train 20 hz")
        assert result.predicted == "A"
        assert result.ranked[0].species == "A"
        assert result.query_pattern == "pulse train 20 hz"

    def test_tie_breaks_alphabetically(self):
        kb = make_kb({"Zebra": ["pulse train"], "Aardvark": ["pulse train"]})
        index = build_index(kb, stop_words=frozenset())
        assert classify(index, kb, "pulse train").predicted == "Aardvark"

    def test_insertion_order_does_not_matter(self):
        texts = {"A": ["pulse train"], "B": ["sweep whistle"], "C": ["clicks"]}
        kb1 = make_kb(texts)
        kb2 = make_kb({k: texts[k] for k in reversed(list(texts))})
        kb2.revision = kb1.revision
        q = "pulse sweep"
        r1 = classify(build_index(kb1, stop_words=frozenset()), kb1, q)
        r2 = classify(build_index(kb2, stop_words=frozenset()), kb2, q)
        assert r1.predicted == r2.predicted
        assert [s.species for s in r1.ranked] == [s.species for s in r2.ranked]

    def test_predictions_match_oracle_on_random_queries(self):
        rng = random.Random(42)
        vocab = [f"w{i}" for i in range(15)] + ["pulse", "sweep", "khz", "20"]
        texts = {}
        for s in ["A", "B", "C", "D", "E"]:
            texts[s] = [" ".join(rng.choices(vocab, k=rng.randrange(3, 9)))
                        for _ in range(rng.randrange(1, 4))]
        kb = make_kb(texts)
        index = build_index(kb, stop_words=frozenset())
        for _ in range(20):
            query = " ".join(rng.choices(vocab, k=rng.randrange(3, 9)))
            assert classify(index, kb, query).predicted == \
                ref_predict(texts, query, frozenset())
