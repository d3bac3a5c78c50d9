import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from affordlab.graph import FeatureDims, build_graph, random_features
from affordlab.inference import (InstanceTooLarge, SolverConfig, SolverLimitError, brute_force_oracle,
                                 brute_force_potentials, solve_exact, solve_exact_potentials,
                                 solve_loss_augmented, solve_relaxed, solve_relaxed_potentials)
from affordlab.labeling import Labeling
from affordlab.learning import hamming_loss
from affordlab.model import Potentials, WeightLayout, WeightVector, energy, potentials

from helpers import lp_relaxation_value, random_instance, small_labels

UNIT = FeatureDims(1, 1, 1, 1, 1, 1)


def _pair_instance(u_i, u_j, P):
    """One activity node and one object node joined by an oa edge."""
    g = build_graph([(0, 0)], [0], random_features(UNIT, np.random.default_rng(0)))
    return Potentials(g, [np.asarray(u_i, float), np.asarray(u_j, float)], [np.asarray(P, float)])


def _all_labelings(g, labels):
    return itertools.product(*[range(g.n_labels(i, labels)) for i in range(g.n_nodes)])


# -- relaxed ----------------------------------------------------------------------

def test_relaxed_zero_weights():
    rng = np.random.default_rng(0)
    w, g, labels = random_instance(rng, 2, 2, small_labels())
    r, v = solve_relaxed(w.with_values(np.zeros(len(w))), g)
    assert v == 0.0
    assert r.check_constraints(g) and r.is_half_integral()


def test_relaxed_attractive_pair_is_integral():
    pots = _pair_instance([1.0, -4.0], [1.0, -4.0], [[3.0, -1.0], [-1.0, 3.0]])
    r, v = solve_relaxed_potentials(pots)
    y, best = brute_force_potentials(pots)
    assert r.is_integral_onehot()
    assert r.to_labeling() == y == Labeling([0, 0])
    assert v == pytest.approx(best)


def test_relaxed_frustrated_pair_is_loose():
    pots = _pair_instance([2.0, 2.0], [2.0, 2.0], [[-5.0, -5.0], [-5.0, -5.0]])
    r, v = solve_relaxed_potentials(pots)
    _, best = brute_force_potentials(pots)
    assert any(np.any(np.isclose(y, 0.5)) for y in r.y)
    assert best == pytest.approx(-1.0)
    assert v == pytest.approx(4.0)
    assert v > best + 1


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_relaxed_half_integral_and_upper_bound(seed):
    rng = np.random.default_rng(seed)
    w, g, labels = random_instance(rng)
    r, v = solve_relaxed(w, g)
    assert r.is_half_integral(1e-6)
    assert r.check_constraints(g)
    assert v == pytest.approx(energy(w, g, r), abs=1e-9)
    _, exact = solve_exact(w, g)
    assert v >= exact - 1e-9


def test_relaxed_matches_lp_optimum():
    rng = np.random.default_rng(7)
    for _ in range(25):
        w, g, _ = random_instance(rng)
        pots = potentials(w, g)
        _, v = solve_relaxed_potentials(pots)
        assert v == pytest.approx(lp_relaxation_value(pots), abs=1e-7)


def _indicator_optimum(pots):
    """Unique best binary indicator vector of the unconstrained problem, or None."""
    sizes = [len(u) for u in pots.unary]
    offs = np.cumsum([0] + sizes)
    scored = []
    for bits in itertools.product((0.0, 1.0), repeat=int(offs[-1])):
        b = np.array(bits)
        ys = [b[offs[i]:offs[i + 1]] for i in range(len(sizes))]
        v = sum(u @ y for u, y in zip(pots.unary, ys))
        v += sum(ys[e.i] @ P @ ys[e.j] for e, P in zip(pots.graph.edges, pots.pair))
        scored.append((v, bits))
    scored.sort(reverse=True)
    if scored[0][0] - scored[1][0] < 1e-7:
        return None
    return np.array(scored[0][1])


def test_persistency_of_integral_coordinates():
    # roof duality: integral indicators agree with the optimum of the
    # indicator problem the relaxation is taken over
    rng = np.random.default_rng(11)
    checked = 0
    while checked < 60:
        w, g, _ = random_instance(rng)
        pots = potentials(w, g)
        if sum(len(u) for u in pots.unary) > 12:
            continue
        best = _indicator_optimum(pots)
        if best is None:
            continue
        r, _ = solve_relaxed_potentials(pots)
        flat = np.concatenate(r.y)
        fixed = np.abs(flat - np.round(flat)) < 1e-9
        np.testing.assert_array_equal(np.round(flat[fixed]), best[fixed])
        checked += 1


# -- exact ----------------------------------------------------------------------

def test_exact_zero_weights_lowest_labels():
    rng = np.random.default_rng(0)
    w, g, _ = random_instance(rng, 3, 2, small_labels())
    y, v = solve_exact(w.with_values(np.zeros(len(w))), g)
    assert y == Labeling([0] * g.n_nodes) and v == 0.0


def test_exact_six_nodes_three_labels():
    rng = np.random.default_rng(5)
    w, g, labels = random_instance(rng, 2, 2, small_labels(3, 3))
    assert g.n_nodes == 6
    y, v = solve_exact(w, g)
    yb, vb = brute_force_oracle(w, g)
    assert abs(v - vb) <= 1e-9
    assert y == yb


def test_exact_equals_relaxed_when_relaxation_integral():
    rng = np.random.default_rng(2)
    seen = 0
    for _ in range(200):
        w, g, _ = random_instance(rng)
        r, v = solve_relaxed(w, g)
        if not r.is_integral_onehot():
            continue
        y, ve = solve_exact(w, g)
        assert y == r.to_labeling()
        assert ve == pytest.approx(v, abs=1e-9)
        seen += 1
    assert seen > 10


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_exact_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    w, g, labels = random_instance(rng)
    y, v = solve_exact(w, g)
    yb, vb = brute_force_oracle(w, g)
    assert abs(v - vb) <= 1e-9
    assert y == yb  # tie rule is lexicographic for both
    assert energy(w, g, y) == pytest.approx(v, abs=1e-12)


def test_exact_tie_break_is_lexicographic():
    # every labeling scores the same: the first one wins
    pots = _pair_instance([1.0, 1.0, 1.0], [0.0, 0.0], np.zeros((3, 2)))
    y, v = solve_exact_potentials(pots)
    assert y == Labeling([0, 0]) and v == 1.0


def test_exact_node_budget_raises_with_incumbent():
    rng = np.random.default_rng(3)
    for _ in range(500):
        w, g, _ = random_instance(rng, 4, 1, small_labels(3, 3))
        r, _ = solve_relaxed(w, g)
        if r.is_integral_onehot():
            continue
        try:
            solve_exact(w, g, SolverConfig(max_nodes=1))
        except SolverLimitError as exc:
            assert exc.incumbent is not None and len(exc.incumbent) == g.n_nodes
            assert exc.value == pytest.approx(energy(w, g, exc.incumbent))
            return
    pytest.fail("no instance needed branching")


def test_exact_on_loose_relaxation():
    pots = _pair_instance([2.0, 2.0], [2.0, 2.0], [[-5.0, -5.0], [-5.0, -5.0]])
    y, v = solve_exact_potentials(pots)
    assert v == pytest.approx(-1.0)
    assert y == Labeling([0, 0])


# -- loss augmented --------------------------------------------------------------

def test_loss_augmented_zero_weights():
    rng = np.random.default_rng(1)
    w, g, labels = random_instance(rng, 2, 2, small_labels(3, 3))
    w0 = w.with_values(np.zeros(len(w)))
    y_true = Labeling([1] * g.n_nodes)
    y, v = solve_loss_augmented(w0, g, y_true)
    assert v == pytest.approx(2 * g.n_nodes)
    assert all(a != b for a, b in zip(y.labels, y_true.labels))
    _, v_bf = brute_force_oracle(w0, g, loss_against=y_true)
    assert v_bf == 2 * g.n_nodes


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_loss_augmented_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    w, g, labels = random_instance(rng)
    y_true = Labeling([int(rng.integers(g.n_labels(i, labels))) for i in range(g.n_nodes)])
    y, v = solve_loss_augmented(w, g, y_true)
    best = max(energy(w, g, Labeling(l)) + hamming_loss(y_true, Labeling(l))
               for l in _all_labelings(g, labels))
    assert abs(v - best) <= 1e-9
    assert energy(w, g, y) + hamming_loss(y_true, y) == pytest.approx(v, abs=1e-9)


def test_loss_augmented_relaxed_is_an_upper_bound():
    rng = np.random.default_rng(9)
    for _ in range(30):
        w, g, labels = random_instance(rng)
        y_true = Labeling([int(rng.integers(g.n_labels(i, labels))) for i in range(g.n_nodes)])
        r, v_relaxed = solve_loss_augmented(w, g, y_true, mode="relaxed")
        assert r.is_half_integral()
        _, v = solve_loss_augmented(w, g, y_true)
        assert v_relaxed >= v - 1e-9
    with pytest.raises(ValueError):
        solve_loss_augmented(w, g, y_true, mode="greedy")


def test_loss_augmented_keeps_wide_margin_truth():
    labels = small_labels(2, 2)
    g = build_graph([(0, 0), (1, 1)], [], random_features(UNIT, np.random.default_rng(0)))
    g = type(g)(g.segments, 0, [np.ones(1), np.ones(1)], g.edges, [np.zeros(1)], UNIT)
    layout = WeightLayout(labels, UNIT)
    vals = np.zeros(layout.size)
    layout.view(vals, "activity")[1] = 10.0     # margin 10 per node > 2 * N
    w = WeightVector(layout, vals)
    y_true = Labeling([1, 1])
    y, v = solve_loss_augmented(w, g, y_true)
    assert y == y_true and v == pytest.approx(20.0)
    layout.view(vals, "activity")[1] = 1.0      # margin 1 < loss boost of 2
    y, _ = solve_loss_augmented(WeightVector(layout, vals), g, y_true)
    assert y == Labeling([0, 0])


def test_loss_augmented_beats_random_candidates():
    rng = np.random.default_rng(21)
    for _ in range(20):
        w, g, labels = random_instance(rng, max_nodes=8)
        y_true = Labeling([int(rng.integers(g.n_labels(i, labels))) for i in range(g.n_nodes)])
        _, v = solve_loss_augmented(w, g, y_true)
        for _ in range(200):
            cand = Labeling([int(rng.integers(g.n_labels(i, labels))) for i in range(g.n_nodes)])
            assert v >= energy(w, g, cand) + hamming_loss(y_true, cand) - 1e-9


# -- brute force -------------------------------------------------------------------

def test_brute_force_single_node():
    labels = small_labels(3, 1)
    g = build_graph([(0, 0)], [], random_features(UNIT, np.random.default_rng(0)))
    g = type(g)(g.segments, 0, [np.ones(1)], [], [], UNIT)
    layout = WeightLayout(labels, UNIT)
    vals = np.zeros(layout.size)
    layout.view(vals, "activity")[:, 0] = [1.0, 5.0, 2.0]
    y, v = brute_force_oracle(WeightVector(layout, vals), g)
    assert y == Labeling([1]) and v == 5.0  # second label, zero-based index 1


def test_brute_force_zero_weights():
    rng = np.random.default_rng(0)
    w, g, _ = random_instance(rng, 2, 1, small_labels())
    y, v = brute_force_oracle(w.with_values(np.zeros(len(w))), g)
    assert y == Labeling([0] * g.n_nodes) and v == 0.0


def test_brute_force_refuses_large_instances():
    rng = np.random.default_rng(0)
    w, g, _ = random_instance(rng, 6, 2, small_labels(3, 3), max_nodes=100)
    with pytest.raises(InstanceTooLarge):
        brute_force_oracle(w, g)
