import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import hp_oracle as hp
from orsim.core import Embedding, ProbeContext
from orsim.errors import DimensionMismatch, EmptyRow, OutOfRange, ZeroVector
from orsim.similarity import (
    ALL_MODES,
    EPS_DEN,
    GalleryIndex,
    ScoreBreakdown,
    ScoreTable,
    ScoringMode,
    mode_tables,
    objectness_term,
    or_score,
    or_score_matrix,
    repulsion_term,
    repulsion_terms,
    scores_from_similarities,
    visual_similarity,
)

E_HALF = 0.6065306597126334  # mpmath, exp(-1/2)
E_ONE = 0.36787944117144233  # mpmath, exp(-1)
# composite case: 0.6 * exp(-0.2) * exp(-0.25), mpmath at 40 digits
COMPOSITE = 0.382576890973064

# fixed-point grid resolution bounds the cosine error well below this
GRID_TOL = 1e-7

sims_entries = st.floats(-1.0, 1.0, allow_nan=False)
rows = st.lists(sims_entries, min_size=1, max_size=8)
# rows whose best entry is large enough that the term cannot underflow
informative_rows = st.lists(sims_entries, min_size=1, max_size=8).filter(lambda r: max(r) >= 0.01)


def emb(*v):
    return Embedding(np.array(v, dtype=np.float64))


class TestVisual:
    def test_identical(self):
        v = emb(0.3, -1.2, 5.0)
        assert visual_similarity(v, v) == 1.0

    def test_orthogonal(self):
        assert visual_similarity(emb(1, 0), emb(0, 1)) == 0.0

    def test_antipodal(self):
        assert visual_similarity(emb(1, 2, 3), emb(-1, -2, -3)) == -1.0

    def test_scale_free(self):
        assert visual_similarity(emb(3, 4), emb(4, 3)) == visual_similarity(emb(30, 40), emb(0.4, 0.3))

    def test_known_value(self):
        assert visual_similarity(emb(3, 4), emb(4, 3)) == pytest.approx(0.96, abs=GRID_TOL)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            visual_similarity(emb(1, 0), emb(1, 0, 0))

    def test_zero_vector(self):
        with pytest.raises(ZeroVector):
            visual_similarity(emb(0, 0), emb(1, 0))

    @given(arrays(np.float64, 12, elements=st.floats(-10, 10)), arrays(np.float64, 12, elements=st.floats(-10, 10)))
    @settings(max_examples=150)
    def test_matches_high_precision_cosine(self, a, b):
        if np.linalg.norm(a) < 1e-3 or np.linalg.norm(b) < 1e-3:
            return
        got = visual_similarity(Embedding(a), Embedding(b))
        assert abs(got - float(hp.cosine(a, b))) <= GRID_TOL
        assert -1.0 <= got <= 1.0

    @given(arrays(np.float64, 6, elements=st.floats(-10, 10)))
    def test_half_squared_distance_form(self, a):
        if np.linalg.norm(a) < 1e-3:
            return
        b = a[::-1].copy() + 1.0
        na, nb = a / np.linalg.norm(a), b / np.linalg.norm(b)
        expected = 1.0 - 0.5 * float(np.sum((na - nb) ** 2))
        assert visual_similarity(Embedding(a), Embedding(b)) == pytest.approx(expected, abs=GRID_TOL)


class TestObjectness:
    def test_full_confidence(self):
        assert objectness_term(1.0) == 1.0

    def test_half(self):
        assert abs(objectness_term(0.5) - E_HALF) <= 1e-12

    def test_zero(self):
        assert abs(objectness_term(0.0) - E_ONE) <= 1e-12

    @pytest.mark.parametrize("bad", [-0.01, 1.01, float("nan")])
    def test_out_of_range(self, bad):
        with pytest.raises(OutOfRange):
            objectness_term(bad)

    def test_array_input(self):
        out = objectness_term(np.array([0.0, 0.5, 1.0]))
        np.testing.assert_allclose(out, [E_ONE, E_HALF, 1.0], rtol=0, atol=1e-12)

    @given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    def test_bounded_and_monotone(self, a, b):
        oa, ob = objectness_term(a), objectness_term(b)
        assert math.exp(-1.0) - 1e-16 <= oa <= 1.0
        if a < b:
            assert oa <= ob
        assert (oa == 1.0) == (a == 1.0)

    def test_strictly_increasing_on_grid(self):
        vals = objectness_term(np.linspace(0, 1, 1001))
        assert np.all(np.diff(vals) > 0)


class TestRepulsion:
    def test_probe_is_nearest(self):
        assert repulsion_term([0.9, 0.3, 0.5]) == (1.0, 0.0, 0)

    def test_neighbor_is_nearest(self):
        rep, gap, idx = repulsion_term([0.4, 0.8])
        assert abs(rep - E_HALF) <= 1e-12
        assert gap == pytest.approx(-0.4, abs=1e-15)
        assert idx == 1

    def test_all_negative(self):
        assert repulsion_term([-0.2, -0.1]) == (1.0, 0.0, 0)

    def test_below_eps_den(self):
        assert repulsion_term([0.0, EPS_DEN]) == (1.0, 0.0, 0)
        rep, _, idx = repulsion_term([0.0, 2 * EPS_DEN])
        assert idx == 1 and rep < 1.0

    def test_probe_only(self):
        assert repulsion_term([0.7]) == (1.0, 0.0, 0)

    def test_tie_goes_to_probe(self):
        assert repulsion_term([0.5, 0.5, 0.2]) == (1.0, 0.0, 0)

    def test_tie_between_neighbors_first_wins(self):
        assert repulsion_term([0.1, 0.6, 0.6])[2] == 1

    def test_empty(self):
        with pytest.raises(EmptyRow):
            repulsion_term([])
        with pytest.raises(EmptyRow):
            repulsion_terms(np.zeros((0, 3)))

    @given(rows)
    def test_gap_nonpositive_and_term_bounded(self, row):
        rep, gap, idx = repulsion_term(row)
        assert gap <= 0.0
        assert rep <= 1.0
        assert 0 <= idx < len(row)

    @given(informative_rows)
    def test_term_strictly_positive(self, row):
        assert repulsion_term(row)[0] > 0.0

    @given(rows)
    def test_self_preservation(self, row):
        if len(row) > 1 and row[0] > max(row[1:]):
            assert repulsion_term(row) == (1.0, 0.0, 0)

    @given(st.lists(st.floats(2e-6, 1.0), min_size=1, max_size=8), st.floats(0.05, 1.0))
    def test_positive_scale_invariance(self, row, c):
        scaled = [c * x for x in row]
        if min(scaled) <= EPS_DEN:
            return
        assert abs(repulsion_term(scaled)[0] - repulsion_term(row)[0]) <= 1e-12

    @given(informative_rows)
    @settings(max_examples=200)
    def test_matches_high_precision(self, row):
        rep, gap, idx = repulsion_term(row)
        orep, ogap, oidx = hp.repulsion(row)
        assert idx == oidx
        assert abs(rep - float(orep)) <= 1e-12
        assert abs(gap - float(ogap)) <= 1e-15

    def test_vectorized_equals_scalar(self):
        rng = np.random.default_rng(4)
        sims = rng.uniform(-1, 1, (4, 300))
        rep, gap, nearest = repulsion_terms(sims)
        for j in range(sims.shape[1]):
            assert repulsion_term(sims[:, j]) == (rep[j], gap[j], nearest[j])


class TestScoreTable:
    def test_indexing_gives_breakdown(self):
        t = ScoreTable([0.5], [1.0], [0.9], [-0.1], [1], [0.45])
        assert t[0] == ScoreBreakdown(0.5, 1.0, 0.9, -0.1, 1, 0.45)
        assert len(t) == 1

    def test_slicing_and_equality(self):
        t = ScoreTable([0.5, 0.4], [1, 1], [1, 1], [0, 0], [0, 0], [0.5, 0.4])
        assert t[:1] == t.take([0])
        assert t[1:] != t[:1]

    def test_for_mode(self):
        t = ScoreTable([0.5], [0.8], [0.9], [-0.1], [2], [0.36])
        v = t.for_mode(ScoringMode.VISUAL)
        assert v[0].combined == 0.5 and v[0].nearest_query_index == 0
        assert t.for_mode(ScoringMode.VISUAL_O)[0].combined == 0.5 * 0.8


class TestModes:
    @pytest.mark.parametrize("text,mode", [("visual", ScoringMode.VISUAL), ("O", ScoringMode.VISUAL_O),
                                           ("visualr", ScoringMode.VISUAL_R), (" or ", ScoringMode.VISUAL_OR)])
    def test_parse(self, text, mode):
        assert ScoringMode.parse(text) is mode

    def test_parse_unknown(self):
        with pytest.raises(ValueError):
            ScoringMode.parse("x")

    def test_flags(self):
        assert [(m.uses_objectness, m.uses_repulsion) for m in ALL_MODES] == [
            (False, False), (True, False), (False, True), (True, True)]


class TestCombined:
    def test_no_neighbors_full_confidence(self, make_item):
        ctx = ProbeContext(make_item("p", "f1", [1.0, 2.0, 0.5]))
        b = or_score(ctx, make_item("g", "f2", [0.3, 2.0, 1.0], det=1.0))
        assert b.combined == b.visual
        assert (b.objectness, b.repulsion) == (1.0, 1.0)

    def test_composite_from_similarities(self):
        sims = np.array([[0.6], [0.6], [0.8]])
        t = scores_from_similarities(sims, np.array([0.8]), ScoringMode.VISUAL_OR)
        expected = float(hp.combined(0.6, 0.8, [0.6, 0.6, 0.8]))
        assert abs(expected - COMPOSITE) <= 1e-15
        assert abs(t[0].combined - COMPOSITE) <= 1e-12
        assert t[0].nearest_query_index == 2

    def test_composite_from_embeddings(self, make_item):
        probe = make_item("p", "f1", [0.6, 0.8, 0.0])
        n1 = make_item("n1", "f1", [0.6, 0.0, 0.8])
        n2 = make_item("n2", "f1", [0.8, 0.6, 0.0])
        g = make_item("g", "f2", [1.0, 0.0, 0.0], det=0.8)
        b = or_score(ProbeContext(probe, (n1, n2)), g)
        assert b.visual == pytest.approx(0.6, abs=GRID_TOL)
        assert b.combined == pytest.approx(COMPOSITE, abs=GRID_TOL)

    def test_visual_mode_ignores_terms(self, make_item):
        probe = make_item("p", "f1", [0.6, 0.8, 0.0])
        ctx = ProbeContext(probe, (make_item("n", "f1", [0.9, 0.1, 0.0]),))
        b = or_score(ctx, make_item("g", "f2", [1.0, 0.0, 0.2], det=0.1), ScoringMode.VISUAL)
        assert b.combined == b.visual

    def test_dimension_mismatch_propagates(self, make_item):
        ctx = ProbeContext(make_item("p", "f1", [1.0, 0.0]))
        with pytest.raises(DimensionMismatch):
            or_score(ctx, make_item("g", "f2", [1.0, 0.0, 0.0]))

    def test_zero_vector_names_item(self, make_item):
        ctx = ProbeContext(make_item("p", "f1", [1.0, 0.0]))
        gallery = [make_item("ok", "f2", [1.0, 1.0]), make_item("bad", "f2", [0.0, 0.0])]
        with pytest.raises(ZeroVector, match="'bad'"):
            or_score_matrix(ctx, gallery)

    def test_single_item_gallery(self, make_item):
        ctx = ProbeContext(make_item("p", "f1", [1.0, 0.2]), (make_item("n", "f1", [0.1, 1.0]),))
        g = make_item("g", "f2", [0.7, 0.7], det=0.6)
        table = or_score_matrix(ctx, [g])
        assert len(table) == 1 and table[0] == or_score(ctx, g)

    def test_batch_equals_loop_bitwise(self, make_item):
        rng = np.random.default_rng(0)
        ctx = ProbeContext(make_item("p", "f1", rng.standard_normal(8)),
                           tuple(make_item(f"n{i}", "f1", rng.standard_normal(8)) for i in range(3)))
        gallery = [make_item(f"g{i}", "f2", rng.standard_normal(8), det=float(rng.uniform())) for i in range(3)]
        for mode in ALL_MODES:
            table = or_score_matrix(ctx, gallery, mode)
            for j, g in enumerate(gallery):
                assert table[j] == or_score(ctx, g, mode)

    def test_index_reused(self, make_item):
        ctx = ProbeContext(make_item("p", "f1", [1.0, 0.2]))
        gallery = [make_item("a", "f2", [0.5, 0.5]), make_item("b", "f2", [0.1, 0.9])]
        assert or_score_matrix(ctx, GalleryIndex(gallery)) == or_score_matrix(ctx, gallery)

    def test_mode_tables_match_direct(self, make_item):
        rng = np.random.default_rng(1)
        ctx = ProbeContext(make_item("p", "f1", rng.standard_normal(5)),
                           (make_item("n", "f1", rng.standard_normal(5)),))
        gallery = [make_item(f"g{i}", "f2", rng.standard_normal(5), det=float(rng.uniform())) for i in range(20)]
        tables = mode_tables(ctx, gallery)
        for m in ALL_MODES:
            assert tables[m] == or_score_matrix(ctx, gallery, m)


similarity_matrices = st.integers(1, 4).flatmap(
    lambda q: arrays(np.float64, (q, 6), elements=st.floats(-1.0, 1.0)))


class TestCombinedProperties:
    @given(similarity_matrices, arrays(np.float64, 6, elements=st.floats(0.0, 1.0)))
    def test_mode_consistency(self, sims, det):
        t = {m: scores_from_similarities(sims, det, m) for m in ALL_MODES}
        full = t[ScoringMode.VISUAL_OR]
        np.testing.assert_allclose(full.combined, t[ScoringMode.VISUAL_O].combined * full.repulsion, rtol=0, atol=1e-12)
        np.testing.assert_allclose(full.combined, t[ScoringMode.VISUAL_R].combined * full.objectness, rtol=0, atol=1e-12)
        assert np.array_equal(t[ScoringMode.VISUAL].combined, sims[0])

    @given(st.floats(0.01, 1.0), st.lists(st.floats(-1, 1), max_size=4), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    def test_monotone_in_det_score(self, visual, nbrs, d1, d2):
        if d1 == d2:
            return
        lo, hi = sorted((d1, d2))
        sims = np.array([[visual, visual]] + [[s, s] for s in nbrs])
        for m in (ScoringMode.VISUAL_O, ScoringMode.VISUAL_OR):
            t = scores_from_similarities(sims, np.array([lo, hi]), m)
            if t.repulsion[0] == 0:
                continue
            # strict once the scores differ by more than float resolution
            if hi - lo >= 1e-9:
                assert t.combined[0] < t.combined[1]
            else:
                assert t.combined[0] <= t.combined[1]

    @given(st.integers(0, 2 ** 32 - 1), st.floats(0.05, 20.0))
    def test_positive_scale_ranking_invariance(self, seed, c):
        rng = np.random.default_rng(seed)
        q = int(rng.integers(1, 5))
        sims = rng.uniform(0.01, 1.0, (q, 40))
        det = rng.uniform(0, 1, 40)
        base = scores_from_similarities(sims, det, ScoringMode.VISUAL_OR).combined
        scaled = scores_from_similarities(c * sims, det, ScoringMode.VISUAL_OR).combined
        np.testing.assert_allclose(scaled, c * base, rtol=1e-12)
        order = np.argsort(-scaled, kind="stable")
        # the scaled order must also sort the unscaled scores, up to rounding ties
        assert np.all(np.diff(base[order]) <= 1e-12 * base.max())
