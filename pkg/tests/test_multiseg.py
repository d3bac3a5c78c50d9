import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from affordlab.graph import FeatureDims, SegmentGraph, build_graph, random_features
from affordlab.inference import solve_exact
from affordlab.labeling import Labeling
from affordlab.model import WeightLayout, WeightVector
from affordlab.multiseg import (FrameLabeling, MultiSegError, ThetaWeights, agreement_counts,
                                expand_to_frames, fuse, joint_infer, learn_theta, phi_score,
                                theta_from_counts)
from affordlab.segmentation import uniform_segment

from helpers import SMALL_DIMS, small_labels

UNIT = FeatureDims(1, 1, 1, 1, 1, 1)


def _frames(T, O, rng, labels):
    return FrameLabeling(rng.integers(labels.n_activity, size=T),
                         rng.integers(labels.n_affordance, size=(T, O)))


def test_phi_examples():
    labels = small_labels(3, 2)
    rng = np.random.default_rng(0)
    y = _frames(12, 2, rng, labels)
    K = labels.n_activity + labels.n_affordance
    assert phi_score(y, y, np.zeros(K), labels) == 0.0
    assert phi_score(y, y, np.full(K, 0.25), labels) == pytest.approx(0.25 * 12 * 3)
    other = FrameLabeling((y.activity + 1) % 3, (y.affordance + 1) % 2)
    assert phi_score(other, y, np.ones(K), labels) == 0.0


def test_phi_rejects_mismatched_frames():
    labels = small_labels()
    rng = np.random.default_rng(0)
    with pytest.raises(MultiSegError):
        agreement_counts(_frames(5, 1, rng, labels), _frames(6, 1, rng, labels), labels)


def test_theta_single_hypothesis():
    labels = small_labels(2, 2)
    rng = np.random.default_rng(1)
    truth = _frames(10, 1, rng, labels)
    theta = learn_theta([([_frames(10, 1, rng, labels)], truth)], labels)
    np.testing.assert_allclose(theta.values, 1.0)


def test_theta_identical_hypotheses_split_equally():
    labels = small_labels(2, 2)
    rng = np.random.default_rng(2)
    truth, h = _frames(10, 1, rng, labels), _frames(10, 1, rng, labels)
    theta = learn_theta([([h, h], truth)], labels)
    np.testing.assert_allclose(theta.values, 0.5)


def test_theta_projection_of_hand_counts():
    # a = (3, 1): theta = a + (1 - 4) / 2
    np.testing.assert_allclose(theta_from_counts(np.array([[3.0], [1.0]])), [[1.5], [-0.5]])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 6), st.integers(0, 2 ** 31))
def test_theta_satisfies_kkt(H, K, seed):
    a = np.random.default_rng(seed).integers(0, 1000, size=(H, K)).astype(float)
    th = theta_from_counts(a)
    # stationarity: theta - a is the same multiplier for every hypothesis
    resid = th - a
    assert np.all(np.abs(resid - resid[0]) <= 1e-8)
    assert np.all(np.abs(th.sum(axis=0) - 1.0) <= 1e-8)
    assert ThetaWeights(th).check()


def test_theta_count_modes():
    labels = small_labels(2, 2)
    rng = np.random.default_rng(3)
    ex = [([_frames(8, 1, rng, labels) for _ in range(3)], _frames(8, 1, rng, labels))
          for _ in range(4)]
    raw = sum(np.stack([agreement_counts(h, t, labels) for h in hs]) for hs, t in ex)
    np.testing.assert_allclose(learn_theta(ex, labels, "sum").values, theta_from_counts(raw))
    np.testing.assert_allclose(learn_theta(ex, labels).values, theta_from_counts(raw / (4 * 8 * 2)))
    # per-instance counts do not change when the held-out set is repeated
    np.testing.assert_allclose(learn_theta(ex * 3, labels).values, learn_theta(ex, labels).values)
    with pytest.raises(ValueError):
        learn_theta(ex, labels, "max")


def test_learn_theta_errors():
    labels = small_labels()
    with pytest.raises(MultiSegError):
        learn_theta([], labels)
    with pytest.raises(MultiSegError):
        learn_theta([([], _frames(3, 0, np.random.default_rng(0), labels))], labels)


def test_fuse_weighted_vote_ties_low():
    labels = small_labels(3, 2)
    a = FrameLabeling([0, 0, 1], np.zeros((3, 0)))
    b = FrameLabeling([2, 1, 2], np.zeros((3, 0)))
    K = 5
    th = ThetaWeights(np.full((2, K), 0.5))
    fused = fuse([a, b], th, labels)
    np.testing.assert_array_equal(fused.activity, [0, 0, 1])
    th2 = ThetaWeights(np.array([[0.4] * K, [0.6] * K]))
    np.testing.assert_array_equal(fuse([a, b], th2, labels).activity, [2, 1, 2])


def _hyp_graph(T, size, n_objects, rng, dims=SMALL_DIMS):
    h = uniform_segment(T, size)
    return build_graph(h.ranges, list(range(n_objects)), random_features(dims, rng))


def _weights(labels, dims, rng):
    layout = WeightLayout(labels, dims)
    return WeightVector(layout, rng.uniform(-1, 1, layout.size))


def test_single_hypothesis_is_its_own_map():
    labels = small_labels(3, 2)
    rng = np.random.default_rng(4)
    g = _hyp_graph(12, 4, 1, rng)
    w = _weights(labels, SMALL_DIMS, rng)
    res = joint_infer([g], [w], ThetaWeights.uniform(1, labels), labels)
    y, _ = solve_exact(w, g)
    assert res.fused == expand_to_frames(y, g)
    assert res.converged and res.rounds == 1


def test_identical_hypotheses_give_common_map():
    labels = small_labels(3, 2)
    rng = np.random.default_rng(5)
    g = _hyp_graph(12, 3, 2, rng)
    w = _weights(labels, SMALL_DIMS, rng)
    res = joint_infer([g, g, g], [w, w, w], ThetaWeights.uniform(3, labels), labels)
    assert res.fused == expand_to_frames(solve_exact(w, g)[0], g)


def _activity_only(segments, unary_feature):
    g = build_graph(segments, [], random_features(UNIT, np.random.default_rng(0)))
    return SegmentGraph(g.segments, 0, [np.array([unary_feature])] * len(segments), g.edges,
                        [np.zeros(1)] * len(g.edges), UNIT)


def test_two_hypothesis_conflict_follows_larger_vote():
    labels = small_labels(2, 1)
    layout = WeightLayout(labels, UNIT)
    # hypothesis A: one segment, label 0 strongly; B: two segments, label 1 strongly
    va = np.zeros(layout.size)
    layout.view(va, "activity")[:, 0] = [10.0, 0.0]
    vb = np.zeros(layout.size)
    layout.view(vb, "activity")[:, 0] = [0.0, 10.0]
    ga = _activity_only([(0, 3)], 1.0)
    gb = _activity_only([(0, 1), (2, 3)], 1.0)
    wa, wb = WeightVector(layout, va), WeightVector(layout, vb)
    for lead, expect in ((0, 0), (1, 1)):
        th = np.full((2, 3), 0.5)
        th[lead, :2] = 0.7
        th[1 - lead, :2] = 0.3
        res = joint_infer([ga, gb], [wa, wb], ThetaWeights(th), labels)
        np.testing.assert_array_equal(res.fused.activity, [expect] * 4)
        objs = [t["objective"] for t in res.trace]
        assert all(b >= a - 1e-9 for a, b in zip(objs, objs[1:]))
        # unary margins dominate the agreement bonus, so each hypothesis keeps its MAP
        assert res.hypothesis_labelings[0] == Labeling([0])
        assert res.hypothesis_labelings[1] == Labeling([1, 1])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 100_000))
def test_objective_non_decreasing_and_terminates(seed):
    rng = np.random.default_rng(seed)
    labels = small_labels(3, 3)
    T, O = 24, 2
    graphs = [_hyp_graph(T, s, O, rng) for s in (4, 6, 8)]
    models = [_weights(labels, SMALL_DIMS, rng) for _ in graphs]
    theta = ThetaWeights(theta_from_counts(rng.uniform(0, 3, size=(3, 6))))
    res = joint_infer(graphs, models, theta, labels, max_rounds=50)
    objs = [t["objective"] for t in res.trace]
    assert all(b >= a - 1e-9 for a, b in zip(objs, objs[1:]))
    assert res.converged and res.rounds <= 50


def test_threads_do_not_change_result():
    rng = np.random.default_rng(9)
    labels = small_labels(3, 3)
    graphs = [_hyp_graph(20, s, 1, rng) for s in (4, 5)]
    models = [_weights(labels, SMALL_DIMS, rng) for _ in graphs]
    theta = ThetaWeights.uniform(2, labels)
    a = joint_infer(graphs, models, theta, labels, threads=1)
    b = joint_infer(graphs, models, theta, labels, threads=2)
    assert a.fused == b.fused and a.trace == b.trace


def test_mismatched_hypotheses_rejected():
    rng = np.random.default_rng(0)
    labels = small_labels()
    g1, g2 = _hyp_graph(12, 4, 1, rng), _hyp_graph(10, 5, 1, rng)
    w = _weights(labels, SMALL_DIMS, rng)
    with pytest.raises(MultiSegError):
        joint_infer([g1, g2], [w, w], ThetaWeights.uniform(2, labels), labels)
    with pytest.raises(MultiSegError):
        joint_infer([g1], [w, w], ThetaWeights.uniform(1, labels), labels)


def test_frame_labeling_record():
    labels = small_labels(2, 2)
    f = FrameLabeling([0, 1], [[1], [0]])
    assert f.to_record() == {"activity": [0, 1], "affordance": [[1], [0]]}
    assert f.to_record(labels)["activity"] == ["a0", "a1"]
