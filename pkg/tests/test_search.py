import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxsearch.config import BACKGROUND, default_config
from ctxsearch.features import SceneArrays, UNARY_SCHEMA, full_schema, state_feature_matrix
from ctxsearch.policy import DegenerateDataError, Policy, SchemaError, TrainConfig, predict
from ctxsearch.scene import classify_region, generate_corpus, generate_scene
from ctxsearch.search import (
    ORACLE,
    POLICY,
    DaggerConfig,
    classify_step,
    dagger_train,
    read_traces,
    seq_explore,
    write_traces,
)

from conftest import anchor_config, make_region, make_scene


def random_policy(scene, seed=0):
    schema = full_schema(scene.catalog)
    rng = np.random.default_rng(seed)
    n = len(Policy.zeros(schema).weights)
    scale = np.ones(n)
    scale[6:-1] = 100.0
    return Policy(rng.normal(size=n), schema, np.zeros(n), scale)


class TestSeqExplore:
    def test_budget_one_is_rank_zero(self):
        scene = generate_scene(default_config(), 1)
        trace = seq_explore(None, scene, 0, 1, ORACLE)
        assert trace.region_ids == [scene.regions[0].id]

    def test_oracle_hand_simulation(self):
        regions = [make_region(i, (10 * i, 0, 10 * i + 8, 8), gt=1 if i in (2, 4) else BACKGROUND)
                   for i in range(5)]
        scene = make_scene(regions)
        assert seq_explore(None, scene, 1, 3, ORACLE).region_ids == [0, 2, 4]

    def test_exhaustive_budget_is_permutation(self):
        scene = generate_scene(default_config(), 2)
        trace = seq_explore(random_policy(scene), scene, 3, 500)
        assert sorted(trace.region_ids) == sorted(r.id for r in scene.regions)

    def test_bad_budget(self):
        with pytest.raises(ValueError):
            seq_explore(None, generate_scene(default_config(), 0), 0, 0, ORACLE)

    def test_empty_scene(self):
        assert len(seq_explore(None, make_scene([]), 0, 5, ORACLE)) == 0

    def test_schema_mismatch(self):
        scene = generate_scene(default_config(), 0)
        other = make_scene([make_region(0)])
        with pytest.raises(SchemaError):
            seq_explore(random_policy(other), scene, 0, 5)

    def test_zero_policy_follows_rank_order(self):
        scene = generate_scene(default_config(), 3)
        trace = seq_explore(Policy.zeros(full_schema(scene.catalog)), scene, 0, 100)
        assert trace.region_ids == [r.id for r in scene.regions]


class TestClassifyStep:
    def test_zero_policy_empty_explored(self):
        scene = generate_scene(default_config(), 4)
        pol = Policy.zeros(full_schema(scene.catalog))
        assert all(classify_step(r, [], pol, 0, scene) == 0.0 for r in scene.regions)

    def test_oracle_beliefs(self):
        scene = generate_scene(default_config(), 4)
        for r in scene.regions:
            assert classify_step(r, [], None, 2, scene) == float(r.gt_class == 2)

    def test_matches_batched_scoring(self):
        scene = generate_scene(default_config(), 5)
        pol = random_policy(scene, 3)
        explored = [(r, classify_region(scene, r.id, 0)) for r in scene.regions[:12]]
        rows = np.arange(12, 100)
        X = state_feature_matrix(SceneArrays(scene), rows, explored, scene.catalog, 0.3)
        batch = pol.scores(X)
        for i, pos in enumerate(rows):
            single = classify_step(scene.regions[pos], explored, pol, 0, scene)
            assert single == pytest.approx(batch[i], rel=1e-12, abs=1e-12)
            assert single == predict(pol, X[i])[1]


scenes_st = st.integers(0, 5000)


@settings(max_examples=30, deadline=None)
@given(scenes_st, st.integers(0, 7), st.integers(1, 100))
def test_rollout_invariants(seed, query, budget):
    scene = generate_scene(default_config(), seed)
    pol = random_policy(scene, seed)
    on = seq_explore(pol, scene, query, budget, background_skip=True)
    off = seq_explore(pol, scene, query, budget, background_skip=False)
    assert on.region_ids == off.region_ids
    ids = on.region_ids
    assert len(ids) == len(set(ids)) == min(budget, len(scene.regions))
    k = sum(not d.is_background for d in on.detections)
    assert on.classification_calls <= (k + 1) * len(scene.regions)
    full = seq_explore(pol, scene, query, 100)
    assert full.region_ids[:budget] == ids


@settings(max_examples=30, deadline=None)
@given(scenes_st, st.integers(0, 7))
def test_oracle_explores_positives_first(seed, query):
    scene = generate_scene(default_config(), seed)
    trace = seq_explore(None, scene, query, 100, ORACLE)
    labels = [scene.region(i).gt_class == query for i in trace.region_ids[1:]]
    first_negative = labels.index(False) if False in labels else len(labels)
    assert all(labels[:first_negative]) and not any(labels[first_negative:])


def test_mixture_extremes_match_pure_modes():
    scene = generate_scene(default_config(), 8)
    pol = random_policy(scene, 1)
    assert seq_explore(pol, scene, 1, 30, ("mixture", 1.0)).region_ids == \
        seq_explore(pol, scene, 1, 30, ORACLE).region_ids
    assert seq_explore(pol, scene, 1, 30, ("mixture", 0.0)).region_ids == \
        seq_explore(pol, scene, 1, 30, POLICY).region_ids


def test_trace_file_roundtrip(tmp_path):
    scene = generate_scene(default_config(), 9)
    traces = [seq_explore(random_policy(scene), scene, q, 20) for q in range(3)]
    write_traces(tmp_path / "t.jsonl", traces)
    back = read_traces(tmp_path / "t.jsonl")
    assert [t.region_ids for t in back] == [t.region_ids for t in traces]
    assert [t.detections for t in back] == [t.detections for t in traces]


def dagger_config(cat, q, **kw):
    return DaggerConfig(TrainConfig.for_catalog(cat, query_class=q), **kw)


class TestDagger:
    def corpus(self, n=30, seed=0, top_k=60):
        scenes = generate_corpus(anchor_config(top_k=top_k), n, seed)
        cat = scenes[0].catalog
        return scenes, cat, cat.index("chair")

    def test_single_iteration_is_behavioral_cloning(self):
        scenes, cat, q = self.corpus(12)
        pol, diags, pols = dagger_train(scenes, q, 1, 60, dagger_config(cat, q))
        assert len(diags) == 1 and diags[0].beta == 1.0 and diags[0].train_hamming == 0.0
        assert pol is pols[0]

    def test_aggregate_is_append_only(self):
        scenes, cat, q = self.corpus(12)
        _, diags, _ = dagger_train(scenes, q, 3, 60, dagger_config(cat, q))
        sizes = [d.aggregate_size for d in diags]
        assert sizes == list(np.cumsum([d.examples_added for d in diags]))
        assert all(b > a for a, b in zip(sizes, sizes[1:]))

    def test_deterministic(self):
        scenes, cat, q = self.corpus(10)
        a, _, _ = dagger_train(scenes, q, 2, 60, dagger_config(cat, q, seed=4))
        b, _, _ = dagger_train(scenes, q, 2, 60, dagger_config(cat, q, seed=4))
        assert np.array_equal(a.weights, b.weights)

    def test_thread_count_does_not_matter(self):
        scenes, cat, q = self.corpus(10)
        a, _, _ = dagger_train(scenes, q, 2, 60, dagger_config(cat, q, threads=1))
        b, _, _ = dagger_train(scenes, q, 2, 60, dagger_config(cat, q, threads=3))
        assert np.array_equal(a.weights, b.weights)

    def test_no_positives(self):
        scenes, cat, _ = self.corpus(5)
        with pytest.raises(DegenerateDataError):
            dagger_train(scenes, cat.index("sofa") + 10, 1, 60, dagger_config(cat, 0))

    def test_learns_anchor_context(self):
        train, cat, q = self.corpus(40, seed=1, top_k=100)
        test, _, _ = self.corpus(50, seed=2, top_k=100)
        pol, _, _ = dagger_train(train, q, 3, 100, dagger_config(cat, q))
        hits = []
        for s in test:
            if not s.positives(q):
                continue
            first = seq_explore(pol, s, q, 3).region_ids
            hits.append(any(s.region(i).gt_class == q for i in first))
        assert np.mean(hits) >= 0.8

    def test_example_filter_restricts_rows(self):
        scenes, cat, q = self.corpus(8)
        allowed = {s.id: {r.id for r in s.regions[:10]} for s in scenes}
        _, full, _ = dagger_train(scenes, q, 1, 60, dagger_config(cat, q))
        _, sub, _ = dagger_train(scenes, q, 1, 60, dagger_config(cat, q, example_filter=allowed))
        assert 0 < sub[0].aggregate_size < full[0].aggregate_size


def test_unary_policy_rolls_out():
    scene = generate_scene(default_config(), 12)
    w = np.zeros(7)
    w[0] = 1.0
    trace = seq_explore(Policy(w, UNARY_SCHEMA, np.zeros(7), np.ones(7)), scene, 0, 100)
    rest = [scene.region(i).objectness_score for i in trace.region_ids[1:]]
    assert rest == sorted(rest, reverse=True)
