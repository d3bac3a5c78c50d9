"""Segment graph: one sub-activity node and one node per object track per segment.

Nodes are numbered segment-major; inside a segment the activity node comes
first, then the object nodes in track order. Edges are stored oriented from
the lower to the higher node index, and the label-pair block of an edge is
indexed ``(label_of_i, label_of_j)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

import numpy as np


class NodeKind(str, enum.Enum):
    ACTIVITY = "activity"
    OBJECT = "object"


class EdgeType(str, enum.Enum):
    OO = "oo"
    OA = "oa"
    OO_TEMPORAL = "oo_temporal"
    AA_TEMPORAL = "aa_temporal"


EDGE_TYPES = (EdgeType.OO, EdgeType.OA, EdgeType.OO_TEMPORAL, EdgeType.AA_TEMPORAL)

# (kind of node i, kind of node j) under the canonical orientation
EDGE_ENDPOINTS = {
    EdgeType.OO: (NodeKind.OBJECT, NodeKind.OBJECT),
    EdgeType.OA: (NodeKind.ACTIVITY, NodeKind.OBJECT),
    EdgeType.OO_TEMPORAL: (NodeKind.OBJECT, NodeKind.OBJECT),
    EdgeType.AA_TEMPORAL: (NodeKind.ACTIVITY, NodeKind.ACTIVITY),
}


@dataclass(frozen=True)
class FeatureDims:
    """Feature-vector length for every node class and edge type."""

    activity: int
    object: int
    oo: int
    oa: int
    oo_temporal: int
    aa_temporal: int

    def node(self, kind: NodeKind) -> int:
        return self.activity if kind is NodeKind.ACTIVITY else self.object

    def edge(self, etype: EdgeType) -> int:
        return getattr(self, etype.value)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("activity", "object", "oo", "oa", "oo_temporal", "aa_temporal")}

    @classmethod
    def from_dict(cls, d: Mapping[str, int]) -> "FeatureDims":
        return cls(**{k: int(v) for k, v in d.items()})


class FeatureProvider(Protocol):
    """Supplies feature vectors by (segment index, object index) coordinates."""

    dims: FeatureDims

    def activity_node(self, s: int) -> np.ndarray: ...
    def object_node(self, s: int, o: int) -> np.ndarray: ...
    def oo_edge(self, s: int, o1: int, o2: int) -> np.ndarray: ...
    def oa_edge(self, s: int, o: int) -> np.ndarray: ...
    def oo_temporal(self, s: int, o: int) -> np.ndarray: ...
    def aa_temporal(self, s: int) -> np.ndarray: ...


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class Edge:
    i: int
    j: int
    etype: EdgeType


class SegmentGraph:
    """Typed factor graph over temporal segments. Treat as immutable."""

    def __init__(self, segments, n_objects, node_features, edges, edge_features, dims,
                 object_ids=None):
        self.segments = tuple((int(a), int(b)) for a, b in segments)
        self.n_objects = int(n_objects)
        self.dims = dims
        self.object_ids = tuple(object_ids) if object_ids is not None else tuple(range(n_objects))
        self.node_features = tuple(np.asarray(f, dtype=float) for f in node_features)
        self.edges = tuple(edges)
        self.edge_features = tuple(np.asarray(f, dtype=float) for f in edge_features)
        for a in self.node_features + self.edge_features:
            a.setflags(write=False)
        n = self.n_nodes
        if len(self.node_features) != n:
            raise GraphError(f"expected {n} node feature vectors, got {len(self.node_features)}")
        for i, f in enumerate(self.node_features):
            if f.shape != (dims.node(self.node_kind(i)),):
                raise GraphError(f"node {i}: feature shape {f.shape} does not match dims")
        for e, f in zip(self.edges, self.edge_features):
            if f.shape != (dims.edge(e.etype),):
                raise GraphError(f"edge {e}: feature shape {f.shape} does not match dims")

    # node numbering ---------------------------------------------------------
    @property
    def n_segments(self) -> int:
        return len(self.segments)

    @property
    def n_nodes(self) -> int:
        return self.n_segments * (self.n_objects + 1)

    def activity_node(self, s: int) -> int:
        return s * (self.n_objects + 1)

    def object_node(self, s: int, o: int) -> int:
        return s * (self.n_objects + 1) + 1 + o

    def node_kind(self, i: int) -> NodeKind:
        return NodeKind.ACTIVITY if i % (self.n_objects + 1) == 0 else NodeKind.OBJECT

    def node_segment(self, i: int) -> int:
        return i // (self.n_objects + 1)

    def node_object(self, i: int) -> int | None:
        r = i % (self.n_objects + 1)
        return None if r == 0 else r - 1

    @property
    def activity_nodes(self) -> list[int]:
        return [self.activity_node(s) for s in range(self.n_segments)]

    @property
    def object_nodes(self) -> list[int]:
        return [self.object_node(s, o) for s in range(self.n_segments)
                for o in range(self.n_objects)]

    def edges_of_type(self, etype: EdgeType) -> list[int]:
        return [k for k, e in enumerate(self.edges) if e.etype is etype]

    def edge_counts(self) -> dict[EdgeType, int]:
        counts = {t: 0 for t in EDGE_TYPES}
        for e in self.edges:
            counts[e.etype] += 1
        return counts

    def n_labels(self, i: int, labels) -> int:
        return labels.n_activity if self.node_kind(i) is NodeKind.ACTIVITY else labels.n_affordance

    def mip_variable_count(self, labels) -> tuple[int, int]:
        """Number of (indicator, auxiliary pair) variables of the MAP integer program."""
        ny = sum(self.n_labels(i, labels) for i in range(self.n_nodes))
        nz = sum(self.n_labels(e.i, labels) * self.n_labels(e.j, labels) for e in self.edges)
        return ny, nz

    def __repr__(self):
        return (f"SegmentGraph(segments={self.n_segments}, objects={self.n_objects}, "
                f"nodes={self.n_nodes}, edges={len(self.edges)})")


def _segments_valid(segments) -> None:
    if len(segments) == 0:
        raise GraphError("empty segmentation")
    prev_end = None
    for a, b in segments:
        if b < a:
            raise GraphError(f"empty segment ({a}, {b})")
        if prev_end is not None and a != prev_end + 1:
            raise GraphError(f"segments not contiguous at frame {a}")
        prev_end = b


def build_graph(segments: Sequence[tuple[int, int]], object_tracks: Sequence,
                features: FeatureProvider) -> SegmentGraph:
    """Build the segment graph and pull every node and edge feature from ``features``.

    ``object_tracks`` may hold anything; items exposing ``covers(start, end)``
    are checked for coverage of every segment.
    """
    _segments_valid(segments)
    for t in object_tracks:
        covers = getattr(t, "covers", None)
        if covers is not None:
            for a, b in segments:
                if not covers(a, b):
                    tid = getattr(t, "object_id", t)
                    raise GraphError(f"object track {tid!r} does not cover segment ({a}, {b})")
    S, O = len(segments), len(object_tracks)
    stride = O + 1
    node_features = []
    for s in range(S):
        node_features.append(features.activity_node(s))
        for o in range(O):
            node_features.append(features.object_node(s, o))
    edges, edge_features = [], []
    for s in range(S):
        a = s * stride
        for o in range(O):
            edges.append(Edge(a, a + 1 + o, EdgeType.OA))
            edge_features.append(features.oa_edge(s, o))
        for o1 in range(O):
            for o2 in range(o1 + 1, O):
                edges.append(Edge(a + 1 + o1, a + 1 + o2, EdgeType.OO))
                edge_features.append(features.oo_edge(s, o1, o2))
        if s + 1 < S:
            edges.append(Edge(a, a + stride, EdgeType.AA_TEMPORAL))
            edge_features.append(features.aa_temporal(s))
            for o in range(O):
                edges.append(Edge(a + 1 + o, a + stride + 1 + o, EdgeType.OO_TEMPORAL))
                edge_features.append(features.oo_temporal(s, o))
    ids = [getattr(t, "object_id", t) for t in object_tracks]
    return SegmentGraph(segments, O, node_features, edges, edge_features, features.dims,
                        object_ids=ids)


class ArrayFeatures:
    """Feature provider that draws each vector from a callable or a lookup table.

    ``source(kind, key)`` is called with ``kind`` one of ``activity``, ``object``,
    ``oo``, ``oa``, ``oo_temporal``, ``aa_temporal`` and ``key`` the coordinate
    tuple, and must return a vector of the matching dimension.
    """

    def __init__(self, dims: FeatureDims, source):
        self.dims = dims
        self._source = source

    def activity_node(self, s):
        return self._source("activity", (s,))

    def object_node(self, s, o):
        return self._source("object", (s, o))

    def oo_edge(self, s, o1, o2):
        return self._source("oo", (s, o1, o2))

    def oa_edge(self, s, o):
        return self._source("oa", (s, o))

    def oo_temporal(self, s, o):
        return self._source("oo_temporal", (s, o))

    def aa_temporal(self, s):
        return self._source("aa_temporal", (s,))


def random_features(dims: FeatureDims, rng: np.random.Generator, scale=1.0) -> ArrayFeatures:
    """Gaussian feature provider, handy for synthetic instances."""
    def source(kind, key):
        return rng.normal(0.0, scale, size=getattr(dims, kind))
    return ArrayFeatures(dims, source)
