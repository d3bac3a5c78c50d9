"""Weight layout, joint feature map, energy, and model files.

The weight vector is the concatenation of, in order: one block per sub-activity
label, one block per affordance label, then for each edge type (oo, oa,
oo_temporal, aa_temporal) one block per ordered label pair, row-major in
``(label_of_i, label_of_j)``.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import EDGE_ENDPOINTS, EDGE_TYPES, FeatureDims, NodeKind, SegmentGraph
from .labeling import Labeling, LabelingError, RelaxedLabeling
from .labels import LabelSpace

FORMAT_VERSION = 1
LAYOUT_NAME = "segment-major/v1"


class DimensionError(ValueError):
    pass


class WeightLayout:
    """Offsets and shapes of every parameter block."""

    def __init__(self, labels: LabelSpace, dims: FeatureDims):
        self.labels = labels
        self.dims = dims
        self.shapes: dict[str, tuple[int, ...]] = {}
        self.offsets: dict[str, int] = {}
        off = 0

        def n(kind):
            return labels.n_activity if kind is NodeKind.ACTIVITY else labels.n_affordance

        for kind in (NodeKind.ACTIVITY, NodeKind.OBJECT):
            shape = (n(kind), dims.node(kind))
            self.shapes[kind.value], self.offsets[kind.value] = shape, off
            off += int(np.prod(shape))
        for t in EDGE_TYPES:
            ki, kj = EDGE_ENDPOINTS[t]
            shape = (n(ki), n(kj), dims.edge(t))
            self.shapes[t.value], self.offsets[t.value] = shape, off
            off += int(np.prod(shape))
        self.size = off

    def block_names(self):
        return list(self.shapes)

    def view(self, flat: np.ndarray, name: str) -> np.ndarray:
        shape = self.shapes[name]
        off = self.offsets[name]
        return flat[off:off + int(np.prod(shape))].reshape(shape)


class WeightVector:
    """Stacked parameters with block views (``w.block("activity")[k]`` is w_a[k])."""

    def __init__(self, layout: WeightLayout, values=None):
        self.layout = layout
        if values is None:
            values = np.zeros(layout.size)
        values = np.array(values, dtype=float)
        if values.shape != (layout.size,):
            raise DimensionError(f"weight vector has shape {values.shape}, layout needs ({layout.size},)")
        values.setflags(write=False)
        self.values = values

    @classmethod
    def zeros(cls, labels: LabelSpace, dims: FeatureDims) -> "WeightVector":
        return cls(WeightLayout(labels, dims))

    @property
    def labels(self) -> LabelSpace:
        return self.layout.labels

    @property
    def dims(self) -> FeatureDims:
        return self.layout.dims

    def block(self, name: str) -> np.ndarray:
        return self.layout.view(self.values, name)

    def with_values(self, values) -> "WeightVector":
        return WeightVector(self.layout, values)

    def __len__(self):
        return self.layout.size


@dataclass
class Potentials:
    """Per-node label scores and per-edge label-pair scores for one graph."""

    graph: SegmentGraph
    unary: list[np.ndarray]
    pair: list[np.ndarray]
    constant: float = 0.0

    def with_unary_bonus(self, bonus: list[np.ndarray], constant: float = 0.0) -> "Potentials":
        return Potentials(self.graph, [u + b for u, b in zip(self.unary, bonus)], self.pair,
                          self.constant + constant)

    def score(self, y: Labeling) -> float:
        s = self.constant
        for i, k in enumerate(y.labels):
            s += self.unary[i][k]
        for e, p in zip(self.graph.edges, self.pair):
            s += p[y.labels[e.i], y.labels[e.j]]
        return float(s)

    def relaxed_score(self, r: RelaxedLabeling) -> float:
        s = self.constant
        for u, v in zip(self.unary, r.y):
            s += float(u @ v)
        for p, z in zip(self.pair, r.z):
            s += float(np.sum(p * z))
        return float(s)


def _check(w: WeightVector, graph: SegmentGraph):
    if w.dims != graph.dims:
        raise DimensionError(f"weight dims {w.dims} do not match graph dims {graph.dims}")


def potentials(w: WeightVector, graph: SegmentGraph) -> Potentials:
    _check(w, graph)
    wa, wo = w.block("activity"), w.block("object")
    unary = []
    for i, f in enumerate(graph.node_features):
        W = wa if graph.node_kind(i) is NodeKind.ACTIVITY else wo
        unary.append(W @ f)
    blocks = {t: w.block(t.value) for t in EDGE_TYPES}
    pair = [blocks[e.etype] @ f for e, f in zip(graph.edges, graph.edge_features)]
    return Potentials(graph, unary, pair)


def _as_relaxed(graph: SegmentGraph, y, labels: LabelSpace) -> RelaxedLabeling:
    if isinstance(y, RelaxedLabeling):
        if len(y.y) != graph.n_nodes or len(y.z) != len(graph.edges):
            raise LabelingError("relaxed labeling does not match graph shape")
        return y
    y.check(graph, labels)
    return y.to_relaxed(graph, labels)


def energy(w: WeightVector, graph: SegmentGraph, y) -> float:
    """Energy of ``y`` (a :class:`Labeling` or :class:`RelaxedLabeling`)."""
    pots = potentials(w, graph)
    if isinstance(y, RelaxedLabeling):
        return pots.relaxed_score(_as_relaxed(graph, y, w.labels))
    y.check(graph, w.labels)
    return pots.score(y)


def joint_feature_map(graph: SegmentGraph, y, labels: LabelSpace) -> np.ndarray:
    """Stacked Psi(x, y), laid out like :class:`WeightLayout`."""
    layout = WeightLayout(labels, graph.dims)
    psi = np.zeros(layout.size)
    if isinstance(y, Labeling):
        y.check(graph, labels)
        for i, (k, f) in enumerate(zip(y.labels, graph.node_features)):
            layout.view(psi, graph.node_kind(i).value)[k] += f
        for e, f in zip(graph.edges, graph.edge_features):
            layout.view(psi, e.etype.value)[y.labels[e.i], y.labels[e.j]] += f
        return psi
    r = _as_relaxed(graph, y, labels)
    for i, (v, f) in enumerate(zip(r.y, graph.node_features)):
        layout.view(psi, graph.node_kind(i).value)[...] += np.outer(v, f)
    for e, z, f in zip(graph.edges, r.z, graph.edge_features):
        layout.view(psi, e.etype.value)[...] += z[:, :, None] * f
    return psi


# -- serialization ------------------------------------------------------------

@dataclass
class Model:
    """A trained weight vector plus whatever is needed to featurize new data."""

    weights: WeightVector
    extras: dict = field(default_factory=dict)
    arrays: dict = field(default_factory=dict)

    @property
    def labels(self):
        return self.weights.labels

    @property
    def dims(self):
        return self.weights.dims


def save_model(path, model: Model) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "layout": LAYOUT_NAME,
        "labels": model.labels.to_dict(),
        "dims": model.dims.to_dict(),
        "blocks": {n: list(model.weights.layout.shapes[n]) for n in model.weights.layout.block_names()},
        "extras": model.extras,
        "arrays": sorted(model.arrays),
    }
    payload = {"header": np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8),
               "weights": model.weights.values}
    for k, v in model.arrays.items():
        payload[f"array__{k}"] = np.asarray(v)
    buf = io.BytesIO()
    np.savez(buf, **payload)
    Path(path).write_bytes(buf.getvalue())


def load_model(path) -> Model:
    with np.load(Path(path), allow_pickle=False) as z:
        header = json.loads(bytes(z["header"]).decode())
        if header.get("format_version") != FORMAT_VERSION or header.get("layout") != LAYOUT_NAME:
            raise ValueError(f"unsupported model format {header.get('format_version')!r}/{header.get('layout')!r}")
        labels = LabelSpace.from_dict(header["labels"])
        dims = FeatureDims.from_dict(header["dims"])
        w = WeightVector(WeightLayout(labels, dims), z["weights"])
        arrays = {k: z[f"array__{k}"].copy() for k in header["arrays"]}
    return Model(w, header["extras"], arrays)
