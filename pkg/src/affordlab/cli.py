"""Command-line entry point.

Every subcommand writes line-delimited JSON (or CSV for tables) and exits
with 0 on success, 1 on bad input and 2 when a solver or training budget ran
out.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import dataio
from .dataio import FormatError, dumps
from .evaluation import AlignmentError, Metrics, evaluate
from .graph import GraphError
from .inference import InstanceTooLarge, SolverConfig, SolverLimitError
from .labels import LabelSpace
from .learning import TrainingNotConverged, format_trace
from .model import load_model, save_model
from .labeling import Labeling
from .multiseg import (FrameLabeling, MultiSegError, ThetaWeights, expand_to_frames, joint_infer,
                       learn_theta)
from .pipeline import (TRUTH, PipelineConfig, binned_graph, classifier_from_record, classifier_record,
                       cross_validate, fit_highlevel, fit_labeler, highlevel_vector,
                       labeling_names, labels_from_data, model_segmentation, predict,
                       segmentation_ranges, split_labeling, truth_frames,
                       truth_labeling)
from .segmentation import SegmentationError, segment
from .streams import StreamError
from .synth import SynthConfig, SynthConfigError, synth_generate
from .tracking import DetectionGraph, TrackGraphError, best_track, load_detection_records

log = logging.getLogger("affordlab")

EXIT_OK, EXIT_INPUT, EXIT_LIMIT = 0, 1, 2

INPUT_ERRORS = (FormatError, StreamError, GraphError, SegmentationError, SynthConfigError,
                TrackGraphError, MultiSegError, AlignmentError, FileNotFoundError,
                json.JSONDecodeError, KeyError, ValueError)
LIMIT_ERRORS = (SolverLimitError, TrainingNotConverged, InstanceTooLarge)


# -- config ---------------------------------------------------------------------

def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError("config file must hold a JSON object")
    return cfg


def _parse_segmentation(text: str):
    """``truth`` or ``method:key=value,key=value``."""
    if text == TRUTH:
        return TRUTH
    method, _, rest = text.partition(":")
    params = {}
    for item in filter(None, rest.split(",")):
        k, _, v = item.partition("=")
        params[k] = float(v) if "." in v or "e" in v else int(v)
    return method, params


def _pipeline_config(args, cfg: dict) -> PipelineConfig:
    d = dict(cfg.get("pipeline", {}))
    for flag, key in (("C", "C"), ("epsilon", "epsilon"), ("max_iters", "max_iterations"),
                      ("oracle", "oracle")):
        v = getattr(args, flag, None)
        if v is not None:
            d[key] = v
    if getattr(args, "segmentation", None):
        seg = _parse_segmentation(args.segmentation)
        d["segmentation"] = seg if seg == TRUTH else {"method": seg[0], "params": seg[1]}
    if getattr(args, "multiseg", False):
        d["multiseg"] = True
    d["threads"] = args.threads
    pc = PipelineConfig.from_dict(d)
    return replace(pc, solver=_solver_config(args, cfg, pc.solver))


def _solver_config(args, cfg: dict, base: SolverConfig | None = None) -> SolverConfig:
    s = asdict(base) if base is not None else dict(cfg.get("pipeline", {}).get("solver", {}))
    for flag, key in (("max_nodes", "max_nodes"), ("tolerance", "tolerance"),
                      ("time_budget", "time_budget")):
        v = getattr(args, flag, None)
        if v is not None:
            s[key] = v
    return SolverConfig(**s)


def _labels(cfg: dict, seqs) -> LabelSpace:
    if "labels" in cfg:
        return LabelSpace.from_dict(cfg["labels"])
    return labels_from_data(seqs)


def _write(out, text: str):
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _jsonl(records) -> str:
    return "".join(dumps(r) + "\n" for r in records)


def _trace_csv(trace) -> str:
    lines = ["iteration,objective,xi,max_violation,cuts"]
    for r in trace:
        lines.append(f"{r['iteration']},{r['objective']!r},{r['xi']!r},{r['max_violation']!r},{r['cuts']}")
    return "\n".join(lines) + "\n"


# -- subcommands ----------------------------------------------------------------

def cmd_synth(args, cfg):
    d = dict(cfg.get("synth", {}))
    for key in ("n_sequences", "n_subjects", "n_objects", "n_segments", "noise"):
        v = getattr(args, key)
        if v is not None:
            d[key] = v
    if "labels" in d:
        d["labels"] = LabelSpace.from_dict(d["labels"])
    if "segment_length" in d:
        d["segment_length"] = tuple(d["segment_length"])
    d["seed"] = args.seed
    seqs = synth_generate(SynthConfig(**d))
    paths = dataio.save_dataset(args.out, seqs)
    _write(None, _jsonl({"sequence_id": s.sequence_id, "subject_id": s.subject_id,
                         "path": str(p), "frames": s.num_frames} for s, p in zip(seqs, paths)))


def cmd_segment(args, cfg):
    seq = dataio.load_sequence(args.input)
    params = {}
    for item in args.param or []:
        k, _, v = item.partition("=")
        params[k] = float(v)
    if args.size is not None:
        params["size"] = args.size
    if args.offset is not None:
        params["offset"] = args.offset
    if args.k is not None:
        params["k"] = args.k
    if args.method == "uniform":
        params = {"size": int(params.get("size", 10)), "offset": int(params.get("offset", 0))}
    elif "k" not in params:
        raise ValueError("chain segmentation needs --k")
    h = segment(seq.skeleton, args.method, **params)
    _write(args.out, dumps(h.to_record()) + "\n")


def _plots_dir(args):
    if getattr(args, "plots", None):
        p = Path(args.plots)
        p.mkdir(parents=True, exist_ok=True)
        return p
    return None


def cmd_train(args, cfg):
    seqs = dataio.load_dataset(args.data)
    labels = _labels(cfg, seqs)
    pc = _pipeline_config(args, cfg)
    records = []
    model = fit_labeler(seqs, labels, pc, log_records=records.append)
    if len({s.truth.highlevel for s in seqs if s.truth}) >= 2:
        model.extras["highlevel"] = classifier_record(fit_highlevel(seqs, labels, pc))
    save_model(args.out, model)
    trace = model.extras["trace"]
    if args.log:
        _write(args.log, format_trace(trace))
    plots = _plots_dir(args)
    if plots is not None:
        (plots / "objective_trace.csv").write_text(_trace_csv(trace))
        from .plotting import plot_objective_trace
        plot_objective_trace(trace, plots / "objective_trace.png")
    _write(None, dumps({"model": str(args.out), **model.extras["training"]}) + "\n")


def _ranges_from(args, seq, model):
    if getattr(args, "hypothesis", None):
        hyps = dataio.load_hypotheses(args.hypothesis)
        if len(hyps) != 1:
            raise ValueError("--hypothesis file must hold exactly one hypothesis")
        if not hyps[0].is_partition(seq.num_frames):
            raise ValueError("hypothesis does not partition the sequence")
        return hyps[0].ranges
    return segmentation_ranges(seq, model_segmentation(model))


def cmd_infer(args, cfg):
    model = load_model(args.model)
    seq = dataio.load_sequence(args.input)
    ranges = _ranges_from(args, seq, model)
    ranges, y = predict(model, seq, ranges, _solver_config(args, cfg))
    acts, affs = labeling_names(y, seq, model.labels)
    rec = dataio.labeling_record(seq.sequence_id, ranges, acts, affs,
                                 [t.object_id for t in seq.objects])
    _write(args.out, dumps(rec) + "\n")


def _load_models(directory):
    paths = sorted(Path(directory).glob("*.npz"))
    if not paths:
        raise FileNotFoundError(f"no .npz models in {directory}")
    return [load_model(p) for p in paths]


def cmd_learn_theta(args, cfg):
    models = _load_models(args.models)
    seqs = dataio.load_dataset(args.data)
    labels = models[0].labels
    solver = _solver_config(args, cfg)
    heldout = []
    for seq in seqs:
        frames = []
        for m in models:
            ranges, y = predict(m, seq, None, solver)
            frames.append(expand_to_frames(y, binned_graph(m, seq, ranges)))
        heldout.append((frames, truth_frames(seq, labels)))
    counts = args.counts or cfg.get("pipeline", {}).get("theta_counts", "mean")
    theta = learn_theta(heldout, labels, counts)
    _write(args.out, dumps({"theta": theta.values.tolist(),
                            "labels": list(labels.subactivity_labels + labels.affordance_labels)}) + "\n")


def cmd_infer_multi(args, cfg):
    models = _load_models(args.models)
    labels = models[0].labels
    seq = dataio.load_sequence(args.input)
    with open(args.theta) as fh:
        theta = ThetaWeights(np.asarray(json.load(fh)["theta"], dtype=float))
    if args.hypotheses:
        hyps = dataio.load_hypotheses(args.hypotheses)
        if len(hyps) != len(models):
            raise ValueError(f"{len(hyps)} hypotheses for {len(models)} models")
        hyp_ranges = [h.ranges for h in hyps]
    else:
        hyp_ranges = [segmentation_ranges(seq, model_segmentation(m)) for m in models]
    graphs = [binned_graph(m, seq, r) for m, r in zip(models, hyp_ranges)]
    solver = _solver_config(args, cfg)
    res = joint_infer(graphs, [m.weights for m in models], theta, labels,
                      max_rounds=args.max_rounds, solver=solver, threads=args.threads)
    rec = {"sequence_id": seq.sequence_id, "rounds": res.rounds, "converged": res.converged,
           "object_ids": [t.object_id for t in seq.objects], "frames": res.fused.to_record(labels)}
    _write(args.out, dumps(rec) + "\n")
    if args.trace:
        _write(args.trace, _jsonl(res.trace))


def cmd_classify_highlevel(args, cfg):
    model = load_model(args.model)
    if "highlevel" not in model.extras:
        raise ValueError("model has no high-level classifier (train on data with >= 2 activities)")
    clf = classifier_from_record(model.extras["highlevel"])
    seq = dataio.load_sequence(args.tracks)
    labels = model.labels
    pc = _pipeline_config(args, cfg)
    out = []
    for rec in dataio.load_labeling(args.labels):
        if rec.get("sequence_id") not in (None, seq.sequence_id):
            continue
        if "segments" in rec:
            ranges = [(s["start"], s["end"]) for s in rec["segments"]]
            flat = []
            for s in rec["segments"]:
                flat.append(labels.subactivity_index(s["subactivity"]))
                flat += [labels.affordance_index(s["affordances"][t.object_id]) for t in seq.objects]
            x = highlevel_vector(seq, ranges, Labeling(tuple(flat)), labels, pc)
        else:
            fr = rec["frames"]
            frames = FrameLabeling([labels.subactivity_index(a) for a in fr["activity"]],
                                   [[labels.affordance_index(k) for k in row] for row in fr["affordance"]])
            x = highlevel_vector(seq, None, None, labels, pc, frames=frames)
        out.append({"sequence_id": seq.sequence_id, "highlevel": clf.classify(x),
                    "scores": dict(zip(clf.classes, clf.scores(x).tolist()))})
    if not out:
        raise ValueError(f"no labeling for sequence {seq.sequence_id} in {args.labels}")
    _write(args.out, _jsonl(out))


def cmd_track(args, cfg):
    records = load_detection_records(args.detections)
    lam = args.lam if args.lam is not None else float(cfg.get("tracker", {}).get("lambda", 1.0))
    graph = DetectionGraph.from_records(records, lam=lam)
    out = []
    if args.start:
        starts = [tuple(int(v) for v in s.split(":")) for s in args.start]
    else:
        first = min(k[0] for k in graph.nodes)
        starts = sorted(k for k in graph.nodes if k[0] == first)
    for st in starts:
        path, score = best_track(graph, st)
        out.append({"start": list(st), "path": [list(k) for k in path], "score": score})
    _write(args.out, _jsonl(out))


def cmd_xval(args, cfg):
    seqs = dataio.load_dataset(args.data)
    labels = _labels(cfg, seqs)
    pc = _pipeline_config(args, cfg)
    folds = args.folds if args.folds is not None else cfg.get("folds")
    report = cross_validate(seqs, labels, pc, n_folds=folds)
    out = Path(args.out) if args.out else None
    text = json.dumps(report, sort_keys=True, indent=1) + "\n"
    if out is None:
        sys.stdout.write(text)
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(text)
    pooled = {}
    for level, summ in report["summary"].items():
        p = summ["pooled"]
        m = Metrics(p["classes"], np.array(p["confusion"]))
        pooled[level] = m
        (out / f"confusion_{level}.csv").write_text(m.confusion_csv())
    for i, fold in enumerate(report["folds"]):
        (out / f"trace_fold{i}.csv").write_text(_trace_csv(fold["trace"]))
    summary_lines = ["level,accuracy_mean,accuracy_stderr,macro_precision_mean,macro_recall_mean"]
    for level, summ in sorted(report["summary"].items()):
        vals = [summ["accuracy"]["mean"], summ["accuracy"]["stderr"],
                summ["macro_precision"]["mean"], summ["macro_recall"]["mean"]]
        summary_lines.append(",".join([level] + ["" if v is None else repr(v) for v in vals]))
    (out / "summary.csv").write_text("\n".join(summary_lines) + "\n")
    plots = _plots_dir(args)
    if plots is not None:
        from .plotting import plot_confusion, plot_objective_trace
        for level, m in pooled.items():
            plot_confusion(m, plots / f"confusion_{level}.png", title=level)
        for i, fold in enumerate(report["folds"]):
            plot_objective_trace(fold["trace"], plots / f"trace_fold{i}.png")
    sys.stdout.write(text)


def cmd_eval(args, cfg):
    seqs = {s.sequence_id: s for s in dataio.load_dataset(args.data)}
    labels = _labels(cfg, list(seqs.values()))
    pa, ta, po, to = [], [], [], []
    for rec in dataio.load_labeling(args.pred):
        seq = seqs.get(rec.get("sequence_id"))
        if seq is None:
            raise ValueError(f"prediction for unknown sequence {rec.get('sequence_id')!r}")
        if args.frames or "frames" in rec:
            truth = truth_frames(seq, labels)
            if "frames" in rec:
                fr = rec["frames"]
                act = fr["activity"]
                aff = [k for row in fr["affordance"] for k in row]
            else:
                act, aff = [], []
                for s in rec["segments"]:
                    n = s["end"] - s["start"] + 1
                    act += [s["subactivity"]] * n
                for f in range(seq.num_frames):
                    s = next(s for s in rec["segments"] if s["start"] <= f <= s["end"])
                    aff += [s["affordances"][t.object_id] for t in seq.objects]
            pa += act
            po += aff
            ta += [labels.subactivity_labels[k] for k in truth.activity]
            to += [labels.affordance_labels[k] for k in truth.affordance.ravel()]
        else:
            ranges = [(s["start"], s["end"]) for s in rec["segments"]]
            t_act, t_aff = split_labeling(truth_labeling(seq, ranges, labels), len(seq.objects))
            pa += [s["subactivity"] for s in rec["segments"]]
            po += [s["affordances"][t.object_id] for s in rec["segments"] for t in seq.objects]
            ta += [labels.subactivity_labels[k] for k in t_act]
            to += [labels.affordance_labels[k] for row in t_aff for k in row]
    levels = {"subactivity": evaluate(pa, ta, labels.subactivity_labels),
              "affordance": evaluate(po, to, labels.affordance_labels)}
    if args.level:
        levels = {args.level: levels[args.level]}
    _write(args.out, _jsonl({"level": k, **m.to_dict()} for k, m in levels.items()))
    if args.confusion:
        for k, m in levels.items():
            Path(f"{args.confusion}_{k}.csv").write_text(m.confusion_csv())


# -- parser -----------------------------------------------------------------------

def _solver_flags(p):
    p.add_argument("--max-nodes", type=int, help="branch-and-bound node budget")
    p.add_argument("--tolerance", type=float, help="numeric tolerance for the exact solver")
    p.add_argument("--time-budget", type=float, help="seconds per exact solve")


def _train_flags(p):
    p.add_argument("--C", type=float, help="regularization trade-off")
    p.add_argument("--epsilon", type=float, help="cutting-plane tolerance")
    p.add_argument("--max-iters", type=int, help="cutting-plane iteration limit")
    p.add_argument("--oracle", choices=["exact", "relaxed"], help="separation oracle")
    p.add_argument("--segmentation", help="'truth' or method:key=value,... e.g. uniform:size=10")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="affordlab", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--config", help="JSON file with hyperparameters")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-sequences", type=int)
    p.add_argument("--n-subjects", type=int)
    p.add_argument("--n-objects", type=int)
    p.add_argument("--n-segments", type=int)
    p.add_argument("--noise", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("segment", help="segment a sequence")
    p.add_argument("--input", required=True)
    p.add_argument("--method", required=True, choices=["uniform", "chain-dist", "chain-rate"])
    p.add_argument("--param", action="append", help="key=value")
    p.add_argument("--size", type=int)
    p.add_argument("--offset", type=int)
    p.add_argument("--k", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("train", help="train a labeler")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="write the per-iteration trace as JSON lines")
    p.add_argument("--plots", help="directory for trace CSV and figure")
    _train_flags(p)
    _solver_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="label one sequence")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--hypothesis", help="segmentation hypothesis file (default: the model's)")
    p.add_argument("--out")
    _solver_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("learn-theta", help="fit fusion weights on held-out sequences")
    p.add_argument("--data", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--counts", choices=["mean", "sum"], help="agreement counts per instance or raw")
    p.add_argument("--out")
    _solver_flags(p)
    p.set_defaults(func=cmd_learn_theta)

    p = sub.add_parser("infer-multi", help="fused labeling over several segmentations")
    p.add_argument("--input", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--theta", required=True)
    p.add_argument("--hypotheses", help="one hypothesis per model, in model-file order")
    p.add_argument("--max-rounds", type=int, default=50)
    p.add_argument("--trace", help="write the per-round objective trace")
    p.add_argument("--out")
    _solver_flags(p)
    p.set_defaults(func=cmd_infer_multi)

    p = sub.add_parser("classify-highlevel", help="high-level activity from a labeling")
    p.add_argument("--model", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--tracks", required=True, help="sequence file with the object tracks")
    p.add_argument("--out")
    p.set_defaults(func=cmd_classify_highlevel)

    p = sub.add_parser("track", help="best tracks through a detection graph")
    p.add_argument("--detections", required=True)
    p.add_argument("--start", action="append", help="FRAME:DETECTION (repeatable)")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("xval", help="subject-wise cross-validation")
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="directory for metrics.json and CSV tables")
    p.add_argument("--folds", type=int, help="number of subject folds (default: one per subject)")
    p.add_argument("--multiseg", action="store_true")
    p.add_argument("--plots", help="directory for figures")
    _train_flags(p)
    _solver_flags(p)
    p.set_defaults(func=cmd_xval)

    p = sub.add_parser("eval", help="score a labeling file against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--level", choices=["subactivity", "affordance"])
    p.add_argument("--frames", action="store_true", help="score per frame")
    p.add_argument("--confusion", help="prefix for confusion-matrix CSV files")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args.config)
        np.random.seed(args.seed)
        args.func(args, cfg)
    except LIMIT_ERRORS as exc:
        print(f"error: resource limit: {exc}", file=sys.stderr)
        return EXIT_LIMIT
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
