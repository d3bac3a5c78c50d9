"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""

import itertools
import json
import os
import time

import numpy as np

from affordlab.cli import main
from affordlab.dataio import load_dataset
from affordlab.evaluation import evaluate
from affordlab.features import DEFAULT_TABLE, FeatureTable
from affordlab.graph import FeatureDims, SegmentGraph, build_graph, random_features
from affordlab.inference import brute_force_oracle, solve_exact, solve_loss_augmented, solve_relaxed
from affordlab.labeling import Labeling
from affordlab.labels import LabelSpace
from affordlab.learning import TrainConfig, hamming_loss, train
from affordlab.model import WeightLayout, WeightVector, energy
from affordlab.multiseg import (FrameLabeling, ThetaWeights, expand_to_frames, joint_infer,
                                learn_theta, theta_from_counts)
from affordlab.pipeline import PipelineConfig, cross_validate, labels_from_data
from affordlab.segmentation import uniform_segment
from affordlab.synth import planted_dataset
from affordlab.tracking import Detection, DetectionGraph, best_track

from helpers import random_instance, small_labels


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def test_c01_exact_matches_brute_force(capsys):
    rng = np.random.default_rng(101)
    worst, t0 = 0.0, time.perf_counter()
    for _ in range(200):
        w, g, _ = random_instance(rng)
        _, v = solve_exact(w, g)
        _, vb = brute_force_oracle(w, g)
        worst = max(worst, abs(v - vb))
    elapsed = time.perf_counter() - t0
    report(capsys, 1, worst <= 1e-9 and elapsed < 60,
           f"200 instances, max |exact - brute| = {worst:.2e}, {elapsed:.1f} s")


def test_c02_half_integral(capsys):
    rng = np.random.default_rng(102)
    bad_coord = bad_bound = 0
    for _ in range(100):
        w, g, _ = random_instance(rng)
        r, v = solve_relaxed(w, g)
        bad_coord += not r.is_half_integral(1e-6)
        bad_bound += v < solve_exact(w, g)[1] - 1e-9
    report(capsys, 2, bad_coord == 0 and bad_bound == 0,
           f"100 instances, {bad_coord} non-half-integral, {bad_bound} below exact")


def test_c03_loss_augmented(capsys):
    rng = np.random.default_rng(103)
    worst = 0.0
    for _ in range(100):
        w, g, labels = random_instance(rng)
        y_true = Labeling([int(rng.integers(g.n_labels(i, labels))) for i in range(g.n_nodes)])
        _, v = solve_loss_augmented(w, g, y_true)
        ranges = [range(g.n_labels(i, labels)) for i in range(g.n_nodes)]
        best = max(energy(w, g, Labeling(l)) + hamming_loss(y_true, Labeling(l))
                   for l in itertools.product(*ranges))
        worst = max(worst, abs(v - best))
    report(capsys, 3, worst <= 1e-9, f"100 instances, max deviation {worst:.2e}")


def _micro(w, data):
    return float(np.mean([a == b for g, y in data for a, b in zip(solve_exact(w, g)[0].labels, y.labels)]))


def test_c04_cutting_plane_training(capsys):
    labels = small_labels(3, 3)
    dims = FeatureDims(4, 4, 3, 3, 3, 3)
    pd = planted_dataset(40, 8, 3, labels, dims, seed=1, margin=0.1, noise=0.2)
    cfg = TrainConfig(C=100.0, epsilon=0.01, max_iterations=2000)
    w, diag = train(pd.clean[:20], labels, cfg)
    clean_acc = _micro(w, pd.clean[:20])
    w_noisy, _ = train(pd.observed[:20], labels, cfg)
    held = _micro(w_noisy, pd.observed[20:])
    ok = diag["converged"] and diag["max_violation"] <= 0.01 and clean_acc == 1.0 and held >= 0.85
    report(capsys, 4, ok, f"separable: violation {diag['max_violation']:.4f} after "
           f"{diag['iterations']} iterations, train accuracy {clean_acc:.1%}; "
           f"noisy held-out accuracy {held:.1%} (threshold 85%)")


# -- multi-segmentation suite ----------------------------------------------------

MS_LABELS = small_labels(3, 3)
MS_DIMS = FeatureDims(activity=3, object=3, oo=1, oa=1, oo_temporal=1, aa_temporal=1)
MS_T, MS_O, MS_SIZES, MS_NOISE = 30, 1, (3, 5, 7), 0.5


def _ms_truth(rng):
    bounds = [0]
    while bounds[-1] < MS_T:
        bounds.append(min(MS_T, bounds[-1] + int(rng.integers(4, 9))))
    act = np.zeros(MS_T, int)
    aff = np.zeros((MS_T, MS_O), int)
    for a, b in zip(bounds, bounds[1:]):
        act[a:b] = rng.integers(3)
        aff[a:b] = rng.integers(3, size=MS_O)
    return FrameLabeling(act, aff)


def _ms_graph(truth, size, rng):
    """Node features are noisy label histograms of the frames each segment covers."""
    h = uniform_segment(MS_T, size)
    g = build_graph(h.ranges, list(range(MS_O)), random_features(MS_DIMS, rng))
    nodes = []
    for a, b in h.ranges:
        n = b - a + 1
        nodes.append(np.bincount(truth.activity[a:b + 1], minlength=3) / n + rng.normal(0, MS_NOISE, 3))
        for o in range(MS_O):
            nodes.append(np.bincount(truth.affordance[a:b + 1, o], minlength=3) / n
                         + rng.normal(0, MS_NOISE, 3))
    return SegmentGraph(g.segments, MS_O, nodes, g.edges, [np.ones(1) for _ in g.edges], MS_DIMS)


def _ms_weights():
    layout = WeightLayout(MS_LABELS, MS_DIMS)
    vals = np.zeros(layout.size)
    layout.view(vals, "activity")[:] = np.eye(3)
    layout.view(vals, "object")[:] = np.eye(3)
    return WeightVector(layout, vals)


def _hits(f, t):
    return np.concatenate([f.activity == t.activity, (f.affordance == t.affordance).ravel()])


def test_c05_multiseg(capsys):
    rng = np.random.default_rng(105)
    w = _ms_weights()
    heldout = []
    for _ in range(20):
        truth = _ms_truth(rng)
        graphs = [_ms_graph(truth, s, rng) for s in MS_SIZES]
        heldout.append(([expand_to_frames(solve_exact(w, g)[0], g) for g in graphs], truth))
    theta = learn_theta(heldout, MS_LABELS)
    theta_sum = learn_theta(heldout, MS_LABELS, counts="sum")
    fused, fused_sum, single = [], [], [[] for _ in MS_SIZES]
    monotone, max_rounds, converged = True, 0, True
    for _ in range(50):
        truth = _ms_truth(rng)
        graphs = [_ms_graph(truth, s, rng) for s in MS_SIZES]
        res = joint_infer(graphs, [w] * 3, theta, MS_LABELS, max_rounds=20)
        objs = [r["objective"] for r in res.trace]
        monotone &= all(b >= a - 1e-9 for a, b in zip(objs, objs[1:]))
        max_rounds = max(max_rounds, res.rounds)
        converged &= res.converged
        fused.append(_hits(res.fused, truth))
        fused_sum.append(_hits(joint_infer(graphs, [w] * 3, theta_sum, MS_LABELS, max_rounds=20).fused,
                               truth))
        for n, g in enumerate(graphs):
            single[n].append(_hits(expand_to_frames(solve_exact(w, g)[0], g), truth))
    acc = float(np.concatenate(fused).mean())
    best = max(float(np.concatenate(s).mean()) for s in single)
    ok = monotone and converged and max_rounds <= 20 and acc >= best - 0.02
    report(capsys, 5, ok, f"objective monotone: {monotone}, max rounds {max_rounds}, "
           f"fused {acc:.1%} vs best single {best:.1%} "
           f"(raw summed counts would give {np.concatenate(fused_sum).mean():.1%})")


def test_c06_mip_variable_count(capsys):
    g = build_graph([(s, s) for s in range(12)], [0, 1, 2],
                    random_features(DEFAULT_TABLE.binned_dims(), np.random.default_rng(0)))
    labels = LabelSpace()
    ny, nz = g.mip_variable_count(labels)
    ok = (labels.n_activity, labels.n_affordance) == (10, 12) and ny + nz == 15908
    report(capsys, 6, ok, f"{ny} node + {nz} edge variables = {ny + nz}")


def test_c07_feature_dimensions(capsys):
    d = DEFAULT_TABLE.binned_dims()
    blocks = (d.activity, d.oo, d.oa, d.oo_temporal, d.aa_temporal)
    padded = FeatureTable(object=18).binned_dims().object
    ok = blocks == (1030, 200, 400, 40, 160) and d.object == DEFAULT_TABLE.object * 10 and padded == 180
    report(capsys, 7, ok, f"blocks {blocks}, object {d.object} = {DEFAULT_TABLE.object} x 10, "
           f"18 raw -> {padded}")


def test_c08_theta_kkt(capsys):
    rng = np.random.default_rng(108)
    worst_stat = worst_sum = 0.0
    for _ in range(50):
        H, K = int(rng.integers(1, 6)), int(rng.integers(1, 12))
        a = rng.integers(0, 500, size=(H, K)).astype(float)
        th = theta_from_counts(a)
        # gradient theta - a must equal a common multiplier per label
        resid = th - a
        worst_stat = max(worst_stat, float(np.abs(resid - resid[0]).max()))
        worst_sum = max(worst_sum, float(np.abs(th.sum(axis=0) - 1).max()))
        assert ThetaWeights(th).check()
    report(capsys, 8, worst_stat <= 1e-8 and worst_sum <= 1e-8,
           f"50 instances, stationarity residual {worst_stat:.1e}, constraint residual {worst_sum:.1e}")


def _paths(g, start):
    out = []

    def walk(path, score):
        out.append(score)
        for v, s in g.succ[path[-1]].items():
            walk(path + [v], score + s)
    walk([start], 0.0)
    return out


def test_c09_best_track(capsys):
    rng = np.random.default_rng(109)
    mismatches, checked = 0, 0
    for _ in range(100):
        g = DetectionGraph()
        frames, n = [], 0
        for f in range(int(rng.integers(2, 6))):
            k = min(int(rng.integers(1, 4)), 12 - n)
            if k <= 0:
                break
            frames.append([(f, j) for j in range(k)])
            n += k
        for f in frames:
            for key in f:
                g.add_detection(Detection(*key, float(rng.uniform())))
        for a, b in zip(frames, frames[1:]):
            for u in a:
                for v in b:
                    if rng.uniform() < 0.7:
                        g.add_edge(u, v, float(rng.normal()))
        assert len(g.nodes) <= 12
        for start in g.nodes:
            _, score = best_track(g, start)
            mismatches += score != max(_paths(g, start))
            checked += 1
    report(capsys, 9, mismatches == 0, f"100 graphs, {checked} start nodes, {mismatches} mismatches")


def test_c10_metrics_identity(capsys):
    rng = np.random.default_rng(110)
    bad = 0
    for _ in range(50):
        K = int(rng.integers(2, 7))
        n = int(rng.integers(1, 200))
        truth, pred = rng.integers(K, size=n), rng.integers(K, size=n)
        m = evaluate(pred.tolist(), truth.tolist(), list(range(K)))
        acc = float(np.mean(pred == truth))
        bad += not (abs(m.micro_precision - acc) < 1e-12 and abs(m.micro_recall - acc) < 1e-12
                    and np.array_equal(m.confusion.sum(axis=1), np.bincount(truth, minlength=K))
                    and np.array_equal(m.confusion.sum(axis=0), np.bincount(pred, minlength=K)))
    report(capsys, 10, bad == 0, f"50 pairs, {bad} violations")


def test_c11_published_numbers_disclosure(capsys):
    # informational only: the published CAD-120 figures need the original
    # recordings and vision pipeline; point AFFORDLAB_CAD120 at a canonical
    # export to have the harness report its own numbers next to them
    published = {"ground-truth segmentation": (91.8, 86.0, 84.7), "end-to-end": (79.4, 63.4, 75.0)}
    export = os.environ.get("AFFORDLAB_CAD120")
    if not export:
        report(capsys, 11, True, "informational; no CAD-120 export supplied. Published "
               f"affordance/sub-activity/high-level accuracies {published} are not reproduced here")
        return
    seqs = load_dataset(export)
    result = cross_validate(seqs, labels_from_data(seqs), PipelineConfig())
    ours = {k: round(100 * v["accuracy"]["mean"], 1) for k, v in result["summary"].items()
            if v["accuracy"]["mean"] is not None}
    report(capsys, 11, True, f"informational; measured {ours}, published {published}")


def test_c12_xval_deterministic(capsys, tmp_path):
    data = tmp_path / "data"
    assert main(["--seed", "12", "synth", "--out", str(data), "--n-sequences", "6",
                 "--n-subjects", "3", "--n-objects", "1", "--n-segments", "3"]) == 0
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"pipeline": {"max_iterations": 6, "hypotheses": [
        {"method": "uniform", "params": {"size": 6}}, {"method": "uniform", "params": {"size": 9}}]}}))
    capsys.readouterr()
    outputs = []
    for run in ("a", "b"):
        code = main(["--seed", "12", "--config", str(cfg), "xval", "--data", str(data),
                     "--out", str(tmp_path / run), "--multiseg"])
        assert code == 0
        outputs.append(capsys.readouterr().out)
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)
    report(capsys, 12, same and outputs[0] == outputs[1],
           f"{len(files)} output files byte-identical: {same}")
