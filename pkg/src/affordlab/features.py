"""Node and edge feature maps from skeleton and object streams, plus cumulative binning.

Raw feature layout (per family):

object node (16)
    centroid at the middle frame (3), bounding box at the middle frame (4),
    middle-frame transform w.r.t. the previous frame (6), distance travelled
    by the centroid (1), net centroid displacement (1), occluded fraction (1)
sub-activity node (103)
    head-relative upper-body joint locations at the middle frame (24),
    distance travelled per joint (8), displacement per joint (8), body pose
    (47), hand position (16)
object-object edge (20)
    (dx, dy, dz, distance) between centroids at start, middle and end frame,
    then the per-coordinate max and min over the segment
object-activity edge (40)
    distances from the 8 upper-body joints to the centroid at the same five
    evaluation points
object temporal edge (4)
    vertical displacement and centroid distance between middle frames of
    adjacent segments, each raw and divided by the frame gap
activity temporal edge (16)
    per-joint distance between head-relative middle-frame locations, raw and
    divided by the frame gap

Body pose is the 36 pairwise joint distances, 8 joint heights above the torso
and 3 torso angles; hand position is each palm relative to torso and head (12),
palm-palm distance, the two palm-head distances and the highest palm height
above the torso during the segment (4). These two blocks only match the
dimensions of the pose descriptors usually used with this model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .graph import FeatureDims, SegmentGraph, build_graph
from .streams import HEAD, JOINTS, TORSO, VERTICAL, ActivitySequence, ObjectTrack, Skeleton

N_BINS = 10
QUANTILES = np.arange(N_BINS) / N_BINS

OBJECT_RAW = 16

FAMILIES = ("activity", "object", "oo", "oa", "oo_temporal", "aa_temporal")


@dataclass(frozen=True)
class FeatureTable:
    """Raw dimension per family; binned dimension is raw x bins."""

    activity: int = 103
    object: int = 16
    oo: int = 20
    oa: int = 40
    oo_temporal: int = 4
    aa_temporal: int = 16
    bins: int = N_BINS

    def __post_init__(self):
        fixed = {"activity": 103, "oo": 20, "oa": 40, "oo_temporal": 4, "aa_temporal": 16}
        for name, n in fixed.items():
            if getattr(self, name) != n:
                raise ValueError(f"{name} features have {n} raw values, table says {getattr(self, name)}")
        if self.object < OBJECT_RAW:
            raise ValueError(f"object features need at least {OBJECT_RAW} raw slots")
        if self.bins < 1:
            raise ValueError("bins must be >= 1")

    def raw_dims(self) -> FeatureDims:
        return FeatureDims(self.activity, self.object, self.oo, self.oa,
                           self.oo_temporal, self.aa_temporal)

    def binned_dims(self) -> FeatureDims:
        b = self.bins
        return FeatureDims(self.activity * b, self.object * b, self.oo * b, self.oa * b,
                           self.oo_temporal * b, self.aa_temporal * b)


DEFAULT_TABLE = FeatureTable()


def cumulative_bin(value, thresholds) -> np.ndarray:
    """Indicator j is 1 iff value >= thresholds[j] (a prefix of ones)."""
    thresholds = np.asarray(thresholds, dtype=float)
    if np.any(np.diff(thresholds) <= 0):
        raise ValueError("bin thresholds must be strictly ascending")
    return (np.asarray(value, dtype=float)[..., None] >= thresholds).astype(float)


def fit_thresholds(rows: np.ndarray, raw_dim: int, bins: int = N_BINS) -> np.ndarray:
    """Per-feature quantiles at 0, 1/bins, ..., (bins-1)/bins, made strictly ascending."""
    rows = np.asarray(rows, dtype=float).reshape(-1, raw_dim)
    if len(rows) == 0:
        return np.tile(np.arange(bins, dtype=float), (raw_dim, 1))
    t = np.quantile(rows, np.arange(bins) / bins, axis=0).T.copy()
    for j in range(1, bins):
        floor = t[:, j - 1] + 1e-9 * np.maximum(1.0, np.abs(t[:, j - 1]))
        t[:, j] = np.maximum(t[:, j], floor)
    return t


# -- geometry helpers ---------------------------------------------------------

def _mid(a: int, b: int) -> int:
    return (a + b) // 2


def _path_length(traj: np.ndarray) -> np.ndarray:
    """Summed step lengths along axis 0 for a (frames, ..., 3) trajectory."""
    if len(traj) < 2:
        return np.zeros(traj.shape[1:-1])
    return np.linalg.norm(np.diff(traj, axis=0), axis=-1).sum(axis=0)


def _displacement(traj: np.ndarray) -> np.ndarray:
    return np.linalg.norm(traj[-1] - traj[0], axis=-1)


def _filled(track: ObjectTrack):
    """Centroids and boxes with occluded rows replaced by the nearest visible row."""
    vis = np.flatnonzero(~track.occluded)
    if len(vis) == 0:
        return np.zeros_like(track.centroids), np.zeros_like(track.bboxes), False
    if len(vis) == len(track):
        return track.centroids, track.bboxes, True
    rows = np.arange(len(track))
    pos = np.searchsorted(vis, rows)
    left = vis[np.clip(pos - 1, 0, len(vis) - 1)]
    right = vis[np.clip(pos, 0, len(vis) - 1)]
    nearest = np.where(np.abs(rows - left) <= np.abs(right - rows), left, right)
    return track.centroids[nearest], track.bboxes[nearest], True


class _TrackCache:
    def __init__(self, track: ObjectTrack):
        self.track = track
        self.centroids, self.bboxes, self.any_visible = _filled(track)

    def centroid_window(self, a, b):
        return self.centroids[self.track.window(a, b)]


def _cache(track) -> _TrackCache:
    return track if isinstance(track, _TrackCache) else _TrackCache(track)


# -- node features ------------------------------------------------------------

def object_node_features(track, a: int, b: int) -> np.ndarray:
    """Raw object-node features for frames a..b; fully occluded windows give zeros
    except the occlusion slot."""
    tc = _cache(track)
    tr = tc.track
    occ = tr.occluded[tr.window(a, b)]
    out = np.zeros(OBJECT_RAW)
    out[15] = occ.mean()
    if occ.all() or not tc.any_visible:
        return out
    m = _mid(a, b) - tr.start
    traj = tc.centroid_window(a, b)
    out[0:3] = tc.centroids[m]
    out[3:7] = tc.bboxes[m]
    out[7:13] = tr.transforms[m]
    out[13] = _path_length(traj)
    out[14] = _displacement(traj)
    return out


def _torso_angles(p: np.ndarray) -> np.ndarray:
    sh = p[JOINTS.index("right_shoulder")] - p[JOINTS.index("left_shoulder")]
    spine = p[JOINTS.index("neck")] - p[TORSO]
    h = [i for i in range(3) if i != VERTICAL]
    yaw = np.arctan2(sh[h[1]], sh[h[0]])
    roll = np.arctan2(sh[VERTICAL], np.hypot(sh[h[0]], sh[h[1]]))
    pitch = np.arctan2(spine[h[1]], spine[VERTICAL])
    return np.array([yaw, roll, pitch])


_PAIRS = list(combinations(range(len(JOINTS)), 2))
_LPALM, _RPALM = JOINTS.index("left_palm"), JOINTS.index("right_palm")
_NON_TORSO = [i for i in range(len(JOINTS)) if i != TORSO]


def body_pose_features(p: np.ndarray) -> np.ndarray:
    """47 values for one (9, 3) frame."""
    d = np.array([np.linalg.norm(p[i] - p[j]) for i, j in _PAIRS])
    heights = p[_NON_TORSO, VERTICAL] - p[TORSO, VERTICAL]
    return np.concatenate([d, heights, _torso_angles(p)])


def hand_position_features(window: np.ndarray, p: np.ndarray) -> np.ndarray:
    """16 values; ``p`` is the middle frame, ``window`` the whole segment."""
    palms = p[[_LPALM, _RPALM]]
    rel_torso = (palms - p[TORSO]).ravel()
    rel_head = (palms - p[HEAD]).ravel()
    pp = np.linalg.norm(palms[0] - palms[1])
    ph = np.linalg.norm(palms - p[HEAD], axis=1)
    lift = (window[:, [_LPALM, _RPALM], VERTICAL] - window[:, [TORSO], VERTICAL]).max()
    return np.concatenate([rel_torso, rel_head, [pp], ph, [lift]])


def subactivity_node_features(skeleton: Skeleton, a: int, b: int) -> np.ndarray:
    window = skeleton.positions[a:b + 1]
    rel = window[:, 1:, :] - window[:, :1, :]
    m = _mid(a, b) - a
    p = window[m]
    return np.concatenate([
        rel[m].ravel(),
        _path_length(rel),
        _displacement(rel),
        body_pose_features(p),
        hand_position_features(window, p),
    ])


# -- edge features ------------------------------------------------------------

def _five_points(series: np.ndarray, a: int, b: int) -> np.ndarray:
    """Start, middle, end rows, then column-wise max and min, flattened."""
    m = _mid(a, b) - a
    return np.concatenate([series[0], series[m], series[-1],
                           series.max(axis=0), series.min(axis=0)])


def oo_edge_features(track_a, track_b, a: int, b: int) -> np.ndarray:
    ca, cb = _cache(track_a).centroid_window(a, b), _cache(track_b).centroid_window(a, b)
    d = cb - ca
    series = np.column_stack([d, np.linalg.norm(d, axis=1)])
    return _five_points(series, a, b)


def oa_edge_features(skeleton: Skeleton, track, a: int, b: int) -> np.ndarray:
    joints = skeleton.positions[a:b + 1, 1:, :]
    c = _cache(track).centroid_window(a, b)
    series = np.linalg.norm(joints - c[:, None, :], axis=2)
    return _five_points(series, a, b)


def object_temporal_features(track, seg1, seg2) -> np.ndarray:
    tc = _cache(track)
    m1, m2 = _mid(*seg1), _mid(*seg2)
    c1 = tc.centroids[m1 - tc.track.start]
    c2 = tc.centroids[m2 - tc.track.start]
    gap = max(m2 - m1, 1)
    vert = c2[VERTICAL] - c1[VERTICAL]
    dist = np.linalg.norm(c2 - c1)
    return np.array([vert, vert / gap, dist, dist / gap])


def activity_temporal_features(skeleton: Skeleton, seg1, seg2) -> np.ndarray:
    m1, m2 = _mid(*seg1), _mid(*seg2)
    rel = skeleton.positions[[m1, m2], 1:, :] - skeleton.positions[[m1, m2], :1, :]
    d = np.linalg.norm(rel[1] - rel[0], axis=1)
    gap = max(m2 - m1, 1)
    return np.concatenate([d, d / gap])


# -- providers ----------------------------------------------------------------

class RawSequenceFeatures:
    """Feature provider computing raw features for one segmentation of a sequence."""

    def __init__(self, seq: ActivitySequence, segments, table: FeatureTable = DEFAULT_TABLE):
        self.seq = seq
        self.segments = [tuple(s) for s in segments]
        self.dims = table.raw_dims()
        self._pad = table.object - OBJECT_RAW
        self._tracks = [_TrackCache(t) for t in seq.objects]

    def activity_node(self, s):
        return subactivity_node_features(self.seq.skeleton, *self.segments[s])

    def object_node(self, s, o):
        f = object_node_features(self._tracks[o], *self.segments[s])
        return np.concatenate([f, np.zeros(self._pad)]) if self._pad else f

    def oo_edge(self, s, o1, o2):
        return oo_edge_features(self._tracks[o1], self._tracks[o2], *self.segments[s])

    def oa_edge(self, s, o):
        return oa_edge_features(self.seq.skeleton, self._tracks[o], *self.segments[s])

    def oo_temporal(self, s, o):
        return object_temporal_features(self._tracks[o], self.segments[s], self.segments[s + 1])

    def aa_temporal(self, s):
        return activity_temporal_features(self.seq.skeleton, self.segments[s],
                                          self.segments[s + 1])


def raw_graph(seq: ActivitySequence, segments, table: FeatureTable = DEFAULT_TABLE) -> SegmentGraph:
    return build_graph(segments, seq.objects, RawSequenceFeatures(seq, segments, table))


@dataclass
class Binning:
    """Thresholds per family, shape (raw_dim, bins)."""

    table: FeatureTable = DEFAULT_TABLE
    thresholds: dict = field(default_factory=dict)

    @classmethod
    def fit(cls, graphs, table: FeatureTable = DEFAULT_TABLE) -> "Binning":
        rows = {f: [] for f in FAMILIES}
        for g in graphs:
            for i, f in enumerate(g.node_features):
                rows[g.node_kind(i).value].append(f)
            for e, f in zip(g.edges, g.edge_features):
                rows[e.etype.value].append(f)
        dims = table.raw_dims()
        th = {f: fit_thresholds(np.array(rows[f]) if rows[f] else np.zeros((0, getattr(dims, f))),
                                getattr(dims, f), table.bins) for f in FAMILIES}
        return cls(table, th)

    def apply(self, family: str, raw: np.ndarray) -> np.ndarray:
        t = self.thresholds[family]
        return (np.asarray(raw, float)[:, None] >= t).astype(float).ravel()

    def bin_graph(self, g: SegmentGraph) -> SegmentGraph:
        nodes = [self.apply(g.node_kind(i).value, f) for i, f in enumerate(g.node_features)]
        edges = [self.apply(e.etype.value, f) for e, f in zip(g.edges, g.edge_features)]
        return SegmentGraph(g.segments, g.n_objects, nodes, g.edges, edges,
                            self.table.binned_dims(), object_ids=g.object_ids)

    def to_arrays(self) -> dict:
        return {f"thresholds_{f}": self.thresholds[f] for f in FAMILIES}

    @classmethod
    def from_arrays(cls, arrays: dict, table: FeatureTable = DEFAULT_TABLE) -> "Binning":
        return cls(table, {f: np.asarray(arrays[f"thresholds_{f}"]) for f in FAMILIES})
