import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxsearch.config import BACKGROUND, ClassCatalog
from ctxsearch.features import (
    SceneArrays,
    aggregate_pair_features,
    assemble_state_features,
    full_schema,
    non_maximal_suppress,
    pair_features,
    schema_length,
    sentinel_vector,
    state_feature_matrix,
    unary_features,
)
from ctxsearch.scene import Detection, classify_region, generate_scene

from conftest import make_region, make_scene

CAT = ClassCatalog(("table", "chair"))
SENT = np.array([0.0, 0.0, 800.0, 6.0, 3.0, 3.0])


def pixel_iou(a, b):
    """Brute-force IoU of integer boxes over the pixel grid."""
    grid = np.zeros((2, 64, 64), dtype=bool)
    for g, (x0, y0, x1, y1) in zip(grid, (a, b)):
        g[y0:y1, x0:x1] = True
    return (grid[0] & grid[1]).sum() / (grid[0] | grid[1]).sum()


def test_unary_fields_in_order():
    r = make_region(0, rank=3, objectness=0.8, depth=2.5, back=1.0, min_h=0.0, max_h=0.6)
    np.testing.assert_array_equal(unary_features(r), [0.8, 3.0, 2.5, 1.0, 0.0, 0.6])
    other = make_region(0, rank=7, objectness=0.8, depth=2.5, back=1.0, min_h=0.0, max_h=0.6)
    diff = np.flatnonzero(unary_features(r) != unary_features(other))
    assert list(diff) == [1]
    assert len(unary_features(r)) == 6


class TestPairFeatures:
    def test_identical_boxes(self):
        r = make_region(0, (3, 4, 20, 30))
        np.testing.assert_allclose(pair_features(r, r), [1, 1, 0, 0, 0, 0])

    def test_disjoint(self):
        a, b = make_region(0, (0, 0, 10, 10)), make_region(1, (20, 20, 30, 30))
        assert pair_features(a, b)[0] == 0.0

    def test_half_shifted(self):
        a, b = make_region(0, (0, 0, 10, 10)), make_region(1, (5, 0, 15, 10))
        oracle = pixel_iou((0, 0, 10, 10), (5, 0, 15, 10))
        assert oracle == pytest.approx(50 / 150)
        pf = pair_features(a, b)
        assert pf[0] == pytest.approx(oracle, abs=1e-12)
        assert pf[1] == 1.0
        assert pf[2] == 5.0

    def test_differences_are_absolute(self):
        a = make_region(0, back=1.0, min_h=0.2, max_h=0.5)
        b = make_region(1, back=3.0, min_h=0.1, max_h=1.5)
        np.testing.assert_allclose(pair_features(a, b)[3:], [2.0, 0.1, 1.0])

    def test_degenerate_box(self):
        with pytest.raises(ValueError):
            pair_features(make_region(0, (0, 0, 0, 10)), make_region(1))

    @given(st.lists(st.integers(0, 60), min_size=8, max_size=8))
    def test_iou_matches_pixel_grid(self, v):
        a = (min(v[0], v[1]), min(v[2], v[3]), max(v[0], v[1]) + 1, max(v[2], v[3]) + 1)
        b = (min(v[4], v[5]), min(v[6], v[7]), max(v[4], v[5]) + 1, max(v[6], v[7]) + 1)
        got = pair_features(make_region(0, a), make_region(1, b))[0]
        assert got == pytest.approx(pixel_iou(a, b), abs=1e-12)


boxes = st.tuples(st.floats(0, 500), st.floats(0, 400), st.floats(1, 200), st.floats(1, 200)) \
    .map(lambda t: (t[0], t[1], t[0] + t[2], t[1] + t[3]))
regions = st.builds(lambda b, back, lo, ext: make_region(0, b, back=back, min_h=lo, max_h=lo + ext),
                    boxes, st.floats(0, 6), st.floats(0, 2), st.floats(0, 1))


@given(regions, regions)
def test_pair_symmetry_and_bounds(a, b):
    ab, ba = pair_features(a, b), pair_features(b, a)
    np.testing.assert_allclose(ab, ba)
    assert 0.0 <= ab[0] <= 1.0
    assert 0.0 < ab[1] <= 1.0
    assert pair_features(a, a)[0] == pytest.approx(1.0)


def det(rid, cls, conf):
    return Detection(rid, cls, conf)


class TestNMS:
    def test_identical_boxes_keep_best(self):
        a, b = make_region(0), make_region(1)
        kept = non_maximal_suppress([(a, det(0, 0, 0.8)), (b, det(1, 0, 0.9))], 0.3)
        assert [r.id for r, _ in kept] == [1]

    def test_empty(self):
        assert non_maximal_suppress([], 0.3) == []

    def test_greedy_chain(self):
        A = make_region(0, (0, 0, 10, 10))
        B = make_region(1, (0, 0, 10, 6))  # IoU(A, B) = 60 / 100
        C = make_region(2, (30, 30, 40, 40))
        assert pair_features(A, B)[0] == pytest.approx(0.6)
        explored = [(B, det(1, 1, 0.8)), (C, det(2, 1, 0.7)), (A, det(0, 1, 0.9))]
        kept = non_maximal_suppress(explored, 0.5)
        assert {r.id for r, _ in kept} == {0, 2}

    def test_background_and_other_classes_pass(self):
        a, b, c = make_region(0), make_region(1), make_region(2)
        explored = [(a, det(0, 0, 0.9)), (b, det(1, 1, 0.8)), (c, det(2, BACKGROUND, 0.99))]
        assert non_maximal_suppress(explored, 0.3) == explored


class TestAggregate:
    def test_single_table(self):
        rj, t = make_region(0, (0, 0, 10, 10)), make_region(1, (50, 0, 60, 10))
        agg = aggregate_pair_features(rj, [(t, det(1, 0, 0.9))], CAT, SENT)
        np.testing.assert_array_equal(agg[:6], pair_features(rj, t))
        np.testing.assert_array_equal(agg[6:], SENT)

    def test_empty(self):
        agg = aggregate_pair_features(make_region(0), [], CAT, SENT)
        np.testing.assert_array_equal(agg, np.tile(SENT, 2))

    def test_min_over_two_tables(self):
        rj = make_region(0, (0, 0, 10, 10))
        t1 = make_region(1, (40, 0, 50, 10))  # centroid distance 40
        t2 = make_region(2, (0, 25, 10, 35))  # centroid distance 25
        kept = [(t1, det(1, 0, 0.9)), (t2, det(2, 0, 0.8))]
        dists = [pair_features(rj, r)[2] for r, _ in kept]
        assert dists == [40.0, 25.0]
        assert aggregate_pair_features(rj, kept, CAT, SENT)[2] == min(dists)

    def test_background_never_contributes(self):
        rj, b = make_region(0), make_region(1, (5, 5, 15, 15))
        agg = aggregate_pair_features(rj, [(b, det(1, BACKGROUND, 0.9))], CAT, SENT)
        np.testing.assert_array_equal(agg, np.tile(SENT, 2))


class TestStateFeatures:
    def test_empty_explored(self):
        rj = make_region(3, objectness=0.7)
        x = assemble_state_features(rj, [], CAT, 0.3, SENT)
        np.testing.assert_array_equal(x, np.concatenate([unary_features(rj), np.tile(SENT, 2), [1]]))

    def test_length_for_default_catalog(self):
        cat = ClassCatalog(("bed", "sofa", "table", "lamp", "pillow", "nightstand", "counter", "chair"))
        x = assemble_state_features(make_region(0), [], cat, 0.3, SENT)
        assert len(x) == 55 == schema_length(full_schema(cat))

    def test_composition(self):
        rj = make_region(0, (0, 0, 10, 10))
        explored = [(make_region(1, (20, 0, 30, 10)), det(1, 1, 0.9)),
                    (make_region(2, (0, 40, 10, 50)), det(2, BACKGROUND, 0.9))]
        kept = non_maximal_suppress(explored, 0.3)
        manual = np.concatenate([unary_features(rj),
                                 aggregate_pair_features(rj, kept, CAT, SENT), [1.0]])
        np.testing.assert_array_equal(assemble_state_features(rj, explored, CAT, 0.3, SENT), manual)


def test_batch_matches_scalar_path():
    from ctxsearch.config import default_config
    scene = generate_scene(default_config(), 21)
    arr = SceneArrays(scene)
    explored = [(r, classify_region(scene, r.id, 0)) for r in scene.regions[:30]]
    rows = np.arange(30, len(scene.regions))
    X = state_feature_matrix(arr, rows, explored, scene.catalog, 0.3)
    sent = sentinel_vector(scene)
    for i, pos in enumerate(rows):
        ref = assemble_state_features(scene.regions[pos], explored, scene.catalog, 0.3, sent)
        np.testing.assert_allclose(X[i], ref, rtol=1e-12, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 60))
def test_min_pool_dominance(seed, n_explored):
    from ctxsearch.config import default_config
    scene = generate_scene(default_config(), seed)
    explored = [(r, classify_region(scene, r.id, 1)) for r in scene.regions[:n_explored]]
    kept = non_maximal_suppress(explored, 0.3)
    rj = scene.regions[-1]
    agg = aggregate_pair_features(rj, kept, scene.catalog, sentinel_vector(scene))
    for r, d in kept:
        if d.predicted_class == BACKGROUND:
            continue
        c = d.predicted_class
        assert np.all(agg[6 * c:6 * c + 6] <= pair_features(rj, r))
