"""End-to-end helpers: featurize, fit binning, train, predict, classify.

A labeler is trained for one segmentation method. Its model file carries the
bin thresholds and feature table so new sequences are featurized the same way.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .evaluation import Metrics, aggregate, evaluate, split_theta_subject, subject_folds
from .features import DEFAULT_TABLE, Binning, FeatureTable, raw_graph
from .graph import SegmentGraph
from .highlevel import LinearClassifier, histogram_features, occlusion_features, train_highlevel
from .inference import SolverConfig, solve_exact
from .labeling import Labeling
from .labels import LabelSpace
from .learning import TrainConfig, TrainingNotConverged, train
from .model import Model
from .multiseg import FrameLabeling, JointResult, ThetaWeights, expand_to_frames, joint_infer, learn_theta
from .segmentation import segment
from .streams import ActivitySequence

log = logging.getLogger(__name__)

TRUTH = "truth"


@dataclass
class PipelineConfig:
    C: float = 1.0
    epsilon: float = 0.01
    max_iterations: int = 200
    oracle: str = "exact"
    threads: int = 1
    solver: SolverConfig = field(default_factory=SolverConfig)
    # segmentation used by the single-hypothesis labeler: "truth" or (method, params)
    segmentation: object = TRUTH
    # hypothesis set for multi-segmentation fusion
    hypotheses: list = field(default_factory=list)
    multiseg: bool = False
    max_rounds: int = 50
    theta_counts: str = "mean"        # agreement counts per instance ("mean") or raw ("sum")
    table: FeatureTable = DEFAULT_TABLE
    highlevel_C: float = 10.0
    occlusion_bins: int = 10
    # histogram weighting when segment labels are unavailable: "segment" or "length"
    histogram_mode: str = "segment"
    allow_unconverged: bool = True

    def train_config(self) -> TrainConfig:
        return TrainConfig(C=self.C, epsilon=self.epsilon, max_iterations=self.max_iterations,
                           oracle=self.oracle, threads=self.threads, solver=self.solver)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        if "solver" in d and isinstance(d["solver"], dict):
            d["solver"] = SolverConfig(**d["solver"])
        if "table" in d and isinstance(d["table"], dict):
            d["table"] = FeatureTable(**d["table"])
        seg = d.get("segmentation", TRUTH)
        if isinstance(seg, dict):
            d["segmentation"] = (seg["method"], dict(seg.get("params", {})))
        elif isinstance(seg, list):
            d["segmentation"] = (seg[0], dict(seg[1]))
        d["hypotheses"] = [(h["method"], dict(h.get("params", {}))) if isinstance(h, dict)
                           else (h[0], dict(h[1])) for h in d.get("hypotheses", [])]
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        seg = self.segmentation
        d["segmentation"] = seg if seg == TRUTH else {"method": seg[0], "params": seg[1]}
        d["hypotheses"] = [{"method": m, "params": p} for m, p in self.hypotheses]
        return d


# -- ground truth projections ----------------------------------------------------

def truth_frames(seq: ActivitySequence, labels: LabelSpace) -> FrameLabeling:
    tr = seq.truth
    T, O = seq.num_frames, len(seq.objects)
    act = np.zeros(T, dtype=int)
    aff = np.zeros((T, O), dtype=int)
    for (a, b), s, d in zip(tr.segments, tr.subactivities, tr.affordances):
        act[a:b + 1] = labels.subactivity_index(s)
        for o, t in enumerate(seq.objects):
            aff[a:b + 1, o] = labels.affordance_index(d[t.object_id])
    return FrameLabeling(act, aff)


def _majority(values: np.ndarray, n: int) -> int:
    return int(np.argmax(np.bincount(values, minlength=n)))


def truth_labeling(seq: ActivitySequence, ranges, labels: LabelSpace) -> Labeling:
    """Ground truth on an arbitrary segmentation by per-segment majority (ties low)."""
    fr = truth_frames(seq, labels)
    out = []
    for a, b in ranges:
        out.append(_majority(fr.activity[a:b + 1], labels.n_activity))
        for o in range(fr.n_objects):
            out.append(_majority(fr.affordance[a:b + 1, o], labels.n_affordance))
    return Labeling(tuple(out))


def segmentation_ranges(seq: ActivitySequence, spec) -> tuple:
    if spec == TRUTH:
        return tuple(tuple(s) for s in seq.truth.segments)
    method, params = spec
    return segment(seq.skeleton, method, **params).ranges


def split_labeling(y: Labeling, n_objects: int) -> tuple[list[int], list[list[int]]]:
    """(activity label per segment, affordance labels per segment)."""
    stride = n_objects + 1
    acts = list(y.labels[0::stride])
    affs = [list(y.labels[s * stride + 1:(s + 1) * stride]) for s in range(len(acts))]
    return acts, affs


# -- labeler --------------------------------------------------------------------

def _spec_record(spec):
    return spec if spec == TRUTH else {"method": spec[0], "params": spec[1]}


def _spec_from_record(rec):
    return rec if rec == TRUTH else (rec["method"], dict(rec["params"]))


def fit_labeler(seqs: Sequence[ActivitySequence], labels: LabelSpace, cfg: PipelineConfig,
                spec=None, log_records=None) -> Model:
    """Featurize, fit deciles, bin, and train one weight vector."""
    spec = cfg.segmentation if spec is None else spec
    ranges = [segmentation_ranges(s, spec) for s in seqs]
    raws = [raw_graph(s, r, cfg.table) for s, r in zip(seqs, ranges)]
    binning = Binning.fit(raws, cfg.table)
    data = [(binning.bin_graph(g), truth_labeling(s, r, labels)) for g, s, r in zip(raws, seqs, ranges)]
    try:
        w, diag = train(data, labels, cfg.train_config(), log_records=log_records)
    except TrainingNotConverged as exc:
        if not cfg.allow_unconverged:
            raise
        log.warning("%s; keeping the last iterate", exc)
        w, diag = exc.weights, exc.diagnostics
    extras = {"table": asdict(cfg.table), "segmentation": _spec_record(spec),
              "training": {k: diag[k] for k in ("iterations", "converged", "objective", "xi", "cuts")
                           if k in diag},
              "trace": diag.get("trace", [])}
    return Model(w, extras, binning.to_arrays())


def model_table(model: Model) -> FeatureTable:
    return FeatureTable(**model.extras["table"])


def model_segmentation(model: Model):
    return _spec_from_record(model.extras["segmentation"])


def binned_graph(model: Model, seq: ActivitySequence, ranges) -> SegmentGraph:
    table = model_table(model)
    binning = Binning.from_arrays(model.arrays, table)
    return binning.bin_graph(raw_graph(seq, ranges, table))


def predict(model: Model, seq: ActivitySequence, ranges=None,
            solver: SolverConfig | None = None) -> tuple[tuple, Labeling]:
    if ranges is None:
        ranges = segmentation_ranges(seq, model_segmentation(model))
    g = binned_graph(model, seq, ranges)
    y, _ = solve_exact(model.weights, g, solver)
    return tuple(ranges), y


def labeling_names(y: Labeling, seq: ActivitySequence, labels: LabelSpace):
    acts, affs = split_labeling(y, len(seq.objects))
    return ([labels.subactivity_labels[a] for a in acts],
            [[labels.affordance_labels[k] for k in row] for row in affs])


# -- multiple segmentations -----------------------------------------------------

def hypothesis_ranges(seq: ActivitySequence, hypotheses) -> list[tuple]:
    """Ranges for each configured hypothesis, in config order (duplicates kept)."""
    return [segment(seq.skeleton, m, **p).ranges for m, p in hypotheses]


def fit_multiseg(train_seqs, theta_seqs, labels: LabelSpace, cfg: PipelineConfig):
    """One labeler per hypothesis on ``train_seqs``; theta from their predictions on ``theta_seqs``."""
    if not cfg.hypotheses:
        raise ValueError("multi-segmentation needs a hypothesis list")
    models = [fit_labeler(train_seqs, labels, cfg, spec=h) for h in cfg.hypotheses]
    heldout = []
    for seq in theta_seqs:
        frames = []
        for m, h in zip(models, cfg.hypotheses):
            ranges, y = predict(m, seq, segmentation_ranges(seq, h), cfg.solver)
            frames.append(expand_to_frames(y, binned_graph(m, seq, ranges)))
        heldout.append((frames, truth_frames(seq, labels)))
    theta = learn_theta(heldout, labels, cfg.theta_counts)
    return models, theta


def predict_multiseg(models: Sequence[Model], theta: ThetaWeights, seq: ActivitySequence,
                     labels: LabelSpace, cfg: PipelineConfig) -> JointResult:
    graphs = [binned_graph(m, seq, segmentation_ranges(seq, model_segmentation(m))) for m in models]
    return joint_infer(graphs, [m.weights for m in models], theta, labels,
                       max_rounds=cfg.max_rounds, solver=cfg.solver, threads=cfg.threads)


# -- high level -----------------------------------------------------------------

def highlevel_vector(seq: ActivitySequence, ranges, y: Labeling | None, labels: LabelSpace,
                     cfg: PipelineConfig, frames: FrameLabeling | None = None) -> np.ndarray:
    """Label histograms plus occlusion profile for one sequence.

    Segment labels give one count per segment ("segment" mode) or counts
    weighted by segment length ("length" mode); a frame labeling counts frames.
    """
    if frames is not None:
        hist = histogram_features(frames.activity, frames.affordance, labels.n_activity,
                                  labels.n_affordance)
    else:
        acts, affs = split_labeling(y, len(seq.objects))
        if cfg.histogram_mode == "length":
            lens = [b - a + 1 for a, b in ranges]
            wa = lens
            wo = [l for l, row in zip(lens, affs) for _ in row]
        else:
            wa = wo = None
        hist = histogram_features(acts, [k for row in affs for k in row], labels.n_activity,
                                  labels.n_affordance, wa, wo)
    occ = occlusion_features(seq.objects, cfg.occlusion_bins, num_frames=seq.num_frames)
    return np.concatenate([hist, occ])


def fit_highlevel(seqs, labels: LabelSpace, cfg: PipelineConfig, labelings=None) -> LinearClassifier:
    """Train on ground-truth segment labels, or on ``labelings`` as (ranges, y) pairs."""
    examples = []
    for i, seq in enumerate(seqs):
        if labelings is None:
            ranges = tuple(seq.truth.segments)
            y = truth_labeling(seq, ranges, labels)
        else:
            ranges, y = labelings[i]
        examples.append((highlevel_vector(seq, ranges, y, labels, cfg), seq.truth.highlevel))
    return train_highlevel(examples, C=cfg.highlevel_C, classes=list(labels.highlevel_labels))


def classifier_record(clf: LinearClassifier) -> dict:
    return {"classes": list(clf.classes), "weights": clf.weights.tolist()}


def classifier_from_record(rec: dict) -> LinearClassifier:
    return LinearClassifier(np.asarray(rec["weights"], dtype=float), list(rec["classes"]))


def labels_from_data(seqs: Sequence[ActivitySequence]) -> LabelSpace:
    """Label space of the names seen in ground truth, in default-vocabulary order.

    Names outside the default vocabularies follow in sorted order.
    """
    default = LabelSpace()
    acts, affs, hls = set(), set(), set()
    for s in seqs:
        if s.truth is None:
            continue
        acts.update(s.truth.subactivities)
        for d in s.truth.affordances:
            affs.update(d.values())
        if s.truth.highlevel is not None:
            hls.add(s.truth.highlevel)

    def order(seen, vocab):
        known = [v for v in vocab if v in seen]
        return tuple(known + sorted(seen - set(vocab)))

    return LabelSpace(order(acts, default.subactivity_labels) or default.subactivity_labels,
                      order(affs, default.affordance_labels) or default.affordance_labels,
                      order(hls, default.highlevel_labels) or default.highlevel_labels)


# -- cross-validation -------------------------------------------------------------

def _segment_truth(seq, ranges, labels):
    return split_labeling(truth_labeling(seq, ranges, labels), len(seq.objects))


def _level_metrics(preds, truths, labels: LabelSpace):
    """Segment-level (activity, affordance) metrics from split labelings."""
    pa, ta, po, to = [], [], [], []
    for (pacts, paffs), (tacts, taffs) in zip(preds, truths):
        pa += pacts
        ta += tacts
        po += [k for row in paffs for k in row]
        to += [k for row in taffs for k in row]
    return (evaluate(pa, ta, labels.subactivity_labels),
            evaluate(po, to, labels.affordance_labels))


def _frame_metrics(frames, truths, labels: LabelSpace):
    pa = np.concatenate([f.activity for f in frames])
    ta = np.concatenate([t.activity for t in truths])
    po = np.concatenate([f.affordance.ravel() for f in frames])
    to = np.concatenate([t.affordance.ravel() for t in truths])
    return (evaluate(pa.tolist(), ta.tolist(), labels.subactivity_labels),
            evaluate(po.tolist(), to.tolist(), labels.affordance_labels))


def cross_validate(seqs: Sequence[ActivitySequence], labels: LabelSpace, cfg: PipelineConfig,
                   n_folds: int | None = None) -> dict:
    """Subject-wise cross-validation.

    Reports segment-level and frame-level metrics for the single-segmentation
    labeler, high-level metrics with the classifier trained on ground-truth
    and on predicted labels, and, with ``cfg.multiseg``, frame-level metrics of
    the fused labeling (theta learned on one reserved training subject).
    """
    subjects = [s.subject_id for s in seqs]
    folds = subject_folds(subjects, n_folds)
    results = []
    per_level: dict[str, list[Metrics]] = {}

    def record(level, m):
        per_level.setdefault(level, []).append(m)
        return m.to_dict()

    for test_subjects, train_idx, test_idx in folds:
        train_seqs = [seqs[i] for i in train_idx]
        test_seqs = [seqs[i] for i in test_idx]
        fold = {"test_subjects": test_subjects, "train": [s.sequence_id for s in train_seqs],
                "test": [s.sequence_id for s in test_seqs]}
        model = fit_labeler(train_seqs, labels, cfg)
        fold["training"] = model.extras["training"]
        fold["trace"] = model.extras["trace"]
        preds = [predict(model, s, solver=cfg.solver) for s in test_seqs]
        split_p = [split_labeling(y, len(s.objects)) for s, (_, y) in zip(test_seqs, preds)]
        split_t = [_segment_truth(s, r, labels) for s, (r, _) in zip(test_seqs, preds)]
        m_act, m_aff = _level_metrics(split_p, split_t, labels)
        fold["subactivity"] = record("subactivity", m_act)
        fold["affordance"] = record("affordance", m_aff)
        frames = [expand_to_frames(y, binned_graph(model, s, r)) for s, (r, y) in zip(test_seqs, preds)]
        truths = [truth_frames(s, labels) for s in test_seqs]
        f_act, f_aff = _frame_metrics(frames, truths, labels)
        fold["frame_subactivity"] = record("frame_subactivity", f_act)
        fold["frame_affordance"] = record("frame_affordance", f_aff)

        hl_truth = [s.truth.highlevel for s in test_seqs]
        if all(h is not None for h in hl_truth) and len({s.truth.highlevel for s in train_seqs}) >= 2:
            clf_gt = fit_highlevel(train_seqs, labels, cfg)
            train_preds = [predict(model, s, solver=cfg.solver) for s in train_seqs]
            clf_pred = fit_highlevel(train_seqs, labels, cfg, labelings=train_preds)
            feats = [highlevel_vector(s, r, y, labels, cfg) for s, (r, y) in zip(test_seqs, preds)]
            for name, clf in (("highlevel_truth_trained", clf_gt), ("highlevel_pred_trained", clf_pred)):
                fold[name] = record(name, evaluate([clf.classify(x) for x in feats], hl_truth,
                                                   labels.highlevel_labels))

        if cfg.multiseg:
            core, theta_idx = split_theta_subject(subjects, train_idx)
            models, theta = fit_multiseg([seqs[i] for i in core], [seqs[i] for i in theta_idx],
                                         labels, cfg)
            fused, hyp_frames, traces = [], [[] for _ in models], []
            for s in test_seqs:
                res = predict_multiseg(models, theta, s, labels, cfg)
                fused.append(res.fused)
                traces.append({"sequence_id": s.sequence_id, "rounds": res.rounds,
                               "converged": res.converged, "trace": res.trace})
                for n, m in enumerate(models):
                    r, y = predict(m, s, solver=cfg.solver)
                    hyp_frames[n].append(expand_to_frames(y, binned_graph(m, s, r)))
            ms_act, ms_aff = _frame_metrics(fused, truths, labels)
            fold["multiseg"] = {
                "theta": theta.values.tolist(),
                "theta_subjects": sorted({subjects[i] for i in theta_idx}),
                "subactivity": record("multiseg_subactivity", ms_act),
                "affordance": record("multiseg_affordance", ms_aff),
                "hypotheses": [],
                "joint_traces": traces,
            }
            for n, hf in enumerate(hyp_frames):
                h_act, h_aff = _frame_metrics(hf, truths, labels)
                fold["multiseg"]["hypotheses"].append({
                    "segmentation": _spec_record(cfg.hypotheses[n]),
                    "subactivity": record(f"hypothesis{n}_subactivity", h_act),
                    "affordance": record(f"hypothesis{n}_affordance", h_aff)})
        results.append(fold)
    summary = {level: aggregate(ms) for level, ms in per_level.items()}
    return {"labels": labels.to_dict(), "config": cfg.to_dict(), "folds": results,
            "summary": summary}
