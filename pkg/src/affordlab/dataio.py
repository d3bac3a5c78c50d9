"""Line-delimited JSON formats for sequences, hypotheses and labelings.

A sequence file holds one JSON object per line, discriminated by ``type``:

``meta``      sequence_id, subject_id, num_frames, optional highlevel and meta
``skeleton``  frame_id and joints {name: [x, y, z]} for all 9 joints
``object``    frame_id, object_id, centroid, bbox, occluded, optional transform
``segment``   start, end, subactivity, affordances {object_id: label}

Objects appear in the file in first-seen order, which fixes their index.
"""

from __future__ import annotations

import json
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .segmentation import SegmentationHypothesis
from .streams import JOINTS, ActivitySequence, GroundTruth, ObjectTrack, Skeleton, SkeletonFrame, StreamError


class FormatError(ValueError):
    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


def dumps(obj) -> str:
    """Deterministic compact JSON."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _vec(v, n, what):
    v = [float(x) for x in v]
    if len(v) != n:
        raise ValueError(f"{what} needs {n} values, got {len(v)}")
    return v


def _records(path):
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(path, lineno, f"invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise FormatError(path, lineno, "record is not an object")
            yield lineno, rec


def load_sequence(path) -> ActivitySequence:
    meta = None
    frames = []
    objs: OrderedDict[str, list] = OrderedDict()
    segs = []
    for lineno, rec in _records(path):
        try:
            kind = rec["type"]
            if kind == "meta":
                meta = rec
            elif kind == "skeleton":
                joints = rec["joints"]
                missing = [j for j in JOINTS if j not in joints]
                if missing:
                    raise ValueError(f"missing joint field(s) {missing}")
                frames.append(SkeletonFrame(int(rec["frame_id"]),
                                            {j: _vec(joints[j], 3, j) for j in JOINTS}))
            elif kind == "object":
                occ = bool(rec.get("occluded", False))
                c = rec.get("centroid")
                cent = [np.nan] * 3 if c is None else _vec(c, 3, "centroid")
                tf = rec.get("transform")
                objs.setdefault(str(rec["object_id"]), []).append(
                    (int(rec["frame_id"]), cent, _vec(rec["bbox"], 4, "bbox"), occ,
                     [0.0] * 6 if tf is None else _vec(tf, 6, "transform")))
            elif kind == "segment":
                segs.append((int(rec["start"]), int(rec["end"]), str(rec["subactivity"]),
                             {str(k): str(v) for k, v in rec["affordances"].items()}))
            else:
                raise ValueError(f"unknown record type {kind!r}")
        except (KeyError, TypeError, ValueError, StreamError) as exc:
            msg = f"missing field {exc}" if isinstance(exc, KeyError) else str(exc)
            raise FormatError(path, lineno, msg) from None
    if meta is None:
        raise FormatError(path, 0, "no meta record")
    frames.sort(key=lambda f: f.frame_id)
    ids = [f.frame_id for f in frames]
    if ids != list(range(len(ids))):
        raise FormatError(path, 0, "skeleton frames must be numbered 0..T-1 without gaps")
    skel = Skeleton.from_frames(frames)
    tracks = []
    for oid, rows in objs.items():
        rows.sort(key=lambda r: r[0])
        start = rows[0][0]
        if [r[0] for r in rows] != list(range(start, start + len(rows))):
            raise FormatError(path, 0, f"object {oid} frames are not contiguous")
        tracks.append(ObjectTrack(oid, start, [r[1] for r in rows], [r[2] for r in rows],
                                  [r[3] for r in rows], [r[4] for r in rows]))
    truth = None
    if segs or meta.get("highlevel") is not None:
        segs.sort()
        truth = GroundTruth([(a, b) for a, b, _, _ in segs], [s for _, _, s, _ in segs],
                            [aff for *_, aff in segs], meta.get("highlevel"))
    seq = ActivitySequence(str(meta["sequence_id"]), str(meta.get("subject_id", "")), skel,
                           tracks, truth, dict(meta.get("meta", {})))
    if "num_frames" in meta and int(meta["num_frames"]) != len(skel):
        raise FormatError(path, 0, f"meta says {meta['num_frames']} frames, found {len(skel)}")
    try:
        seq.validate()
    except StreamError as exc:
        raise FormatError(path, 0, str(exc)) from None
    return seq


def _num(x: float):
    return None if not np.isfinite(x) else float(x)


def sequence_records(seq: ActivitySequence):
    meta = {"type": "meta", "sequence_id": seq.sequence_id, "subject_id": seq.subject_id,
            "num_frames": seq.num_frames, "meta": seq.meta}
    if seq.truth is not None and seq.truth.highlevel is not None:
        meta["highlevel"] = seq.truth.highlevel
    yield meta
    for f in seq.skeleton.frames():
        yield {"type": "skeleton", "frame_id": f.frame_id,
               "joints": {j: [float(v) for v in f.joints[j]] for j in JOINTS}}
    for t in seq.objects:
        for i in range(len(t)):
            cent = t.centroids[i]
            yield {"type": "object", "frame_id": t.start + i, "object_id": t.object_id,
                   "centroid": None if not np.all(np.isfinite(cent)) else [float(v) for v in cent],
                   "bbox": [float(v) for v in t.bboxes[i]], "occluded": bool(t.occluded[i]),
                   "transform": [float(v) for v in t.transforms[i]]}
    if seq.truth is not None:
        for (a, b), act, aff in zip(seq.truth.segments, seq.truth.subactivities, seq.truth.affordances):
            yield {"type": "segment", "start": a, "end": b, "subactivity": act, "affordances": aff}


def save_sequence(path, seq: ActivitySequence) -> None:
    with open(path, "w") as fh:
        for rec in sequence_records(seq):
            fh.write(dumps(rec) + "\n")


def load_dataset(directory) -> list[ActivitySequence]:
    """All ``*.jsonl`` sequences in a directory, sorted by file name."""
    paths = sorted(Path(directory).glob("*.jsonl"))
    if not paths:
        raise FileNotFoundError(f"no .jsonl sequence files in {directory}")
    return [load_sequence(p) for p in paths]


def save_dataset(directory, sequences) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    out = []
    for seq in sequences:
        p = d / f"{seq.sequence_id}.jsonl"
        save_sequence(p, seq)
        out.append(p)
    return out


# -- labelings and hypotheses ---------------------------------------------------

def labeling_record(sequence_id, segments, subactivities, affordances, object_ids) -> dict:
    """Segment-level labeling with names; affordances is one list per segment."""
    return {"sequence_id": sequence_id,
            "segments": [{"start": int(a), "end": int(b), "subactivity": act,
                          "affordances": dict(zip(object_ids, aff))}
                         for (a, b), act, aff in zip(segments, subactivities, affordances)]}


def save_labeling(path, records) -> None:
    if isinstance(records, dict):
        records = [records]
    with open(path, "w") as fh:
        for r in records:
            fh.write(dumps(r) + "\n")


def load_labeling(path) -> list[dict]:
    out = []
    for lineno, rec in _records(path):
        if "segments" not in rec and "frames" not in rec:
            raise FormatError(path, lineno, "labeling record needs segments or frames")
        out.append(rec)
    return out


def save_hypotheses(path, hyps) -> None:
    with open(path, "w") as fh:
        for h in hyps:
            fh.write(dumps(h.to_record()) + "\n")


def load_hypotheses(path) -> list[SegmentationHypothesis]:
    out = []
    for lineno, rec in _records(path):
        try:
            out.append(SegmentationHypothesis.from_record(rec))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(path, lineno, f"bad hypothesis ({exc})") from None
    return out


# -- CAD-120 -------------------------------------------------------------------

_CAD_ORIENTED = ("head", "neck", "torso", "left_shoulder", "left_elbow", "right_shoulder",
                 "right_elbow", "left_hip", "left_knee", "right_hip", "right_knee")
_CAD_POSITION_ONLY = ("left_palm", "right_palm", "left_foot", "right_foot")


def convert_cad120(skeleton_file, label_file=None, object_files=(), sequence_id=None,
                   subject_id="", highlevel=None) -> ActivitySequence:
    """Best-effort reader for the public CAD-120 text files.

    Assumed layouts, one comma-separated line per frame:

    * skeleton: frame, 11 x (9 orientation values, confidence, x, y, z,
      confidence), then 4 x (x, y, z, confidence); positions in millimeters,
      last line ``END``.
    * objects: frame, object id, bbox (4 pixel values), transform (6 values).
      These files have no 3D centroid, so the bounding-box center is placed
      on a fixed 1 m depth plane as a stand-in.
    * labels: segment id, start frame, end frame, sub-activity, then one
      affordance per object (frame numbers 1-based).

    Anything that does not parse raises :class:`FormatError`.
    """
    frames = []
    with open(skeleton_file) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip().rstrip(",")
            if not line or line == "END":
                continue
            try:
                vals = [float(v) for v in line.split(",")]
                pos = {}
                off = 1
                for j in _CAD_ORIENTED:
                    pos[j] = [v / 1000.0 for v in vals[off + 10:off + 13]]
                    off += 14
                for j in _CAD_POSITION_ONLY:
                    pos[j] = [v / 1000.0 for v in vals[off:off + 3]]
                    off += 4
                if off > len(vals):
                    raise ValueError("short line")
                frames.append(SkeletonFrame(len(frames), {j: pos[j] for j in JOINTS}))
            except (ValueError, IndexError, StreamError) as exc:
                raise FormatError(skeleton_file, lineno, f"unreadable skeleton line ({exc})") from None
    skel = Skeleton.from_frames(frames)
    T = len(skel)
    tracks = []
    for path in object_files:
        bb, tf = [], []
        oid = None
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.strip().rstrip(",").split(",")
                if not parts or parts == [""] or parts[0] == "END":
                    continue
                try:
                    oid = parts[1]
                    bb.append([float(v) for v in parts[2:6]])
                    t6 = [float(v) for v in parts[6:12]]
                    tf.append(t6 + [0.0] * (6 - len(t6)))
                except (ValueError, IndexError) as exc:
                    raise FormatError(path, lineno, f"unreadable object line ({exc})") from None
        bb = np.array(bb[:T]).reshape(-1, 4)
        occ = np.all(bb == 0, axis=1)
        cx = (bb[:, 0] + bb[:, 2]) / 2.0
        cy = (bb[:, 1] + bb[:, 3]) / 2.0
        cent = np.column_stack([(cx - 320) / 525.0, -(cy - 240) / 525.0, np.ones(len(bb))])
        tracks.append(ObjectTrack(f"obj{oid}", 0, cent, bb, occ, np.array(tf[:T]).reshape(-1, 6)))
    truth = None
    if label_file is not None:
        segs, acts, affs = [], [], []
        with open(label_file) as fh:
            for lineno, line in enumerate(fh, 1):
                parts = [p for p in line.strip().split(",") if p != ""]
                if not parts:
                    continue
                try:
                    a, b = int(parts[1]) - 1, int(parts[2]) - 1
                except (ValueError, IndexError):
                    raise FormatError(label_file, lineno, "unreadable label line") from None
                segs.append((a, min(b, T - 1)))
                acts.append(parts[3])
                affs.append({t.object_id: lab for t, lab in zip(tracks, parts[4:])})
        truth = GroundTruth(segs, acts, affs, highlevel)
    seq_id = sequence_id or Path(skeleton_file).stem
    return ActivitySequence(seq_id, subject_id, skel, tracks, truth, {"source": "cad120"})
