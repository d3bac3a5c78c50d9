"""Synthetic data: activity streams with planted labels, and planted-weight graphs.

The stream generator animates a seated subject's right arm over a table with
a few objects. Each sub-activity has a motion template (where the palm goes
and whether the held object travels with it), so the feature maps carry real
signal about the labels. Everything is driven by one seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import ArrayFeatures, FeatureDims, SegmentGraph, build_graph
from .inference import SolverConfig, loss_augmented_potentials, solve_exact_potentials
from .labeling import Labeling
from .labels import LabelSpace
from .model import WeightLayout, WeightVector, potentials
from .streams import JOINTS, ActivitySequence, GroundTruth, ObjectTrack, Skeleton

SYNTH_LABELS = LabelSpace(
    subactivity_labels=("reaching", "moving", "placing", "null"),
    affordance_labels=("reachable", "movable", "placeable", "stationary"),
    highlevel_labels=("stacking_objects", "unstacking_objects"),
)


class SynthConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MotionTemplate:
    """Palm goal for a segment.

    ``target`` is "object" (go to the active object), "carry" (move the active
    object by ``offset``) or "rest" (return to the rest pose).
    """

    target: str
    offset: tuple = (0.0, 0.0, 0.0)


DEFAULT_TEMPLATES = {
    "reaching": MotionTemplate("object"),
    "moving": MotionTemplate("carry", (0.0, 0.25, -0.15)),
    "placing": MotionTemplate("carry", (0.05, -0.25, 0.0)),
    "null": MotionTemplate("rest"),
}

DEFAULT_TRANSITIONS = {
    "reaching": {"moving": 1.0},
    "moving": {"placing": 1.0},
    "placing": {"reaching": 0.6, "null": 0.4},
    "null": {"reaching": 1.0},
}

DEFAULT_AFFORDANCE = {"reaching": "reachable", "moving": "movable", "placing": "placeable",
                      "null": "stationary"}

# joint offsets from the torso for a seated subject, meters (x right, y up, z toward table)
_REST = {
    "head": (0.0, 0.45, 0.0), "neck": (0.0, 0.3, 0.0), "torso": (0.0, 0.0, 0.0),
    "left_shoulder": (-0.18, 0.25, 0.0), "left_elbow": (-0.22, 0.0, 0.05),
    "left_palm": (-0.2, -0.1, 0.25), "right_shoulder": (0.18, 0.25, 0.0),
    "right_elbow": (0.22, 0.0, 0.05), "right_palm": (0.2, -0.1, 0.25),
}


@dataclass
class SynthConfig:
    labels: LabelSpace = SYNTH_LABELS
    transitions: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_TRANSITIONS.items()})
    start: dict = field(default_factory=lambda: {"reaching": 1.0})
    affordance_of: dict = field(default_factory=lambda: dict(DEFAULT_AFFORDANCE))
    idle_affordance: str = "stationary"
    templates: dict = field(default_factory=lambda: dict(DEFAULT_TEMPLATES))
    noise: float = 0.0                 # std of positional jitter, meters
    n_sequences: int = 8
    n_subjects: int = 4
    n_objects: int = 3
    n_segments: int = 8
    segment_length: tuple = (8, 14)
    occlusion: bool = True
    seed: int = 0

    def validate(self) -> None:
        acts = set(self.labels.subactivity_labels)
        affs = set(self.labels.affordance_labels)
        for a, row in list(self.transitions.items()) + [("<start>", self.start)]:
            if a != "<start>" and a not in acts:
                raise SynthConfigError(f"unknown sub-activity {a!r} in transition table")
            if any(b not in acts for b in row) or any(p < 0 for p in row.values()):
                raise SynthConfigError(f"bad transition row for {a!r}")
            if sum(row.values()) <= 0:
                raise SynthConfigError(f"transition row for {a!r} has no mass")
        for a in acts:
            if a not in self.templates:
                raise SynthConfigError(f"no motion template for {a!r}")
            if self.affordance_of.get(a, self.idle_affordance) not in affs:
                raise SynthConfigError(f"affordance for {a!r} is not a known label")
        if self.idle_affordance not in affs:
            raise SynthConfigError("idle affordance is not a known label")
        lo, hi = self.segment_length
        if not 2 <= lo <= hi:
            raise SynthConfigError("segment lengths must satisfy 2 <= min <= max")
        if self.n_segments < 1 or self.n_objects < 0 or self.n_sequences < 1 or self.n_subjects < 1:
            raise SynthConfigError("counts must be positive")


def _draw(rng, row: dict) -> str:
    keys = sorted(row)
    p = np.array([row[k] for k in keys], dtype=float)
    return keys[int(rng.choice(len(keys), p=p / p.sum()))]


def _label_chain(rng, cfg: SynthConfig) -> list[str]:
    chain = [_draw(rng, cfg.start)]
    while len(chain) < cfg.n_segments:
        chain.append(_draw(rng, cfg.transitions[chain[-1]]))
    return chain


def _ease(n: int) -> np.ndarray:
    """n fractions rising smoothly from just above 0 to 1."""
    t = np.arange(1, n + 1) / n
    return 0.5 - 0.5 * np.cos(np.pi * t)


def _generate_one(rng, cfg: SynthConfig, seq_index: int) -> ActivitySequence:
    subject = seq_index % cfg.n_subjects
    chain = _label_chain(rng, cfg)
    lo, hi = cfg.segment_length
    lengths = rng.integers(lo, hi + 1, size=len(chain))
    bounds = np.concatenate([[0], np.cumsum(lengths)])
    segments = [(int(bounds[s]), int(bounds[s + 1] - 1)) for s in range(len(chain))]
    T = int(bounds[-1])

    torso = np.array([0.0, 1.1, 0.0]) + rng.normal(0, 0.05, 3)
    rest = {j: torso + np.array(v) for j, v in _REST.items()}
    O = cfg.n_objects
    spots = np.array([[-0.25 + 0.25 * o, 0.75, 0.55] for o in range(O)]) + torso * [1, 0, 1]
    obj = spots.astype(float).copy()
    palm = rest["right_palm"].copy()

    skel = np.zeros((T, len(JOINTS), 3))
    cents = np.zeros((O, T, 3))
    active = None
    affordances = []
    for s, (act, (a, b)) in enumerate(zip(chain, segments)):
        tpl = cfg.templates[act]
        if tpl.target == "object" or active is None and tpl.target == "carry":
            active = int(rng.integers(O)) if O else None
        frac = _ease(b - a + 1)
        start_palm = palm.copy()
        moving = None
        if tpl.target == "object" and active is not None:
            goal = obj[active]
        elif tpl.target == "carry" and active is not None:
            goal = start_palm + np.array(tpl.offset)
            moving = active
        else:
            goal = rest["right_palm"]
        start_obj = obj[moving].copy() if moving is not None else None
        for i, t in enumerate(range(a, b + 1)):
            p = start_palm + frac[i] * (goal - start_palm)
            if moving is not None:
                obj[moving] = start_obj + (p - start_palm)
            cents[:, t] = obj
            pose = dict(rest)
            pose["right_palm"] = p
            pose["right_elbow"] = 0.5 * (rest["right_shoulder"] + p) + np.array([0.05, -0.1, 0.0])
            skel[t] = [pose[j] for j in JOINTS]
        palm = goal.copy() if tpl.target != "carry" or active is not None else palm
        aff = {}
        for o in range(O):
            lab = cfg.affordance_of.get(act, cfg.idle_affordance) if o == active else cfg.idle_affordance
            aff[f"obj{o}"] = lab
        affordances.append(aff)
        if tpl.target == "rest":
            active = None

    if cfg.noise > 0:
        skel += rng.normal(0, cfg.noise, skel.shape)
        cents += rng.normal(0, cfg.noise, cents.shape)

    hl_classes = cfg.labels.highlevel_labels
    hl = hl_classes[seq_index % len(hl_classes)]
    occluded = np.zeros((O, T), dtype=bool)
    if cfg.occlusion and O:
        # stacking hides an object late in the sequence, unstacking early
        late = hl_classes.index(hl) % 2 == 0
        half = range(T // 2, T) if late else range(0, T // 2)
        idle = [o for o in range(O) if all(affordances[s][f"obj{o}"] == cfg.idle_affordance
                                            for s, (a, b) in enumerate(segments) if a in half or b in half)]
        if idle:
            o = idle[int(rng.integers(len(idle)))]
            occluded[o, list(half)] = True

    objects = []
    for o in range(O):
        c = cents[o]
        bbox = np.column_stack([320 + 400 * c[:, 0] - 30, 240 - 400 * (c[:, 1] - 1.0) - 30,
                                320 + 400 * c[:, 0] + 30, 240 - 400 * (c[:, 1] - 1.0) + 30])
        tf = np.zeros((T, 6))
        tf[1:, 3:] = np.diff(c, axis=0)
        objects.append(ObjectTrack(f"obj{o}", 0, c, bbox, occluded[o], tf))
    truth = GroundTruth(segments, list(chain), affordances, hl)
    return ActivitySequence(f"seq{seq_index:03d}", f"subject{subject + 1}", Skeleton(skel),
                            objects, truth, {"generator": "synth", "seed": cfg.seed})


def synth_generate(config: SynthConfig | None = None) -> list[ActivitySequence]:
    """Deterministic list of labeled sequences for ``config``."""
    cfg = config or SynthConfig()
    cfg.validate()
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.n_sequences)
    out = []
    for i, ss in enumerate(children):
        seq = _generate_one(np.random.default_rng(ss), cfg, i)
        seq.validate()
        out.append(seq)
    return out


# -- planted-weight graphs ----------------------------------------------------

@dataclass
class PlantedData:
    w_star: WeightVector
    clean: list          # (graph, labeling) with labels = argmax under w_star
    observed: list       # same labels, graph features with noise added


def _graph_with(g: SegmentGraph, nodes, edges) -> SegmentGraph:
    return SegmentGraph(g.segments, g.n_objects, nodes, g.edges, edges, g.dims,
                        object_ids=g.object_ids)


def planted_dataset(n_graphs: int, n_segments: int, n_objects: int, labels: LabelSpace,
                    dims: FeatureDims, seed: int, noise: float = 0.0, margin: float = 0.0,
                    feature_scale: float = 1.0, max_tries: int = 1000,
                    solver: SolverConfig | None = None) -> PlantedData:
    """Graphs whose labels are the exact MAP under a random planted weight vector.

    With ``margin > 0`` a graph is kept only if its planted labeling beats every
    other labeling y by at least ``margin * Hamming(y*, y)``, so ``w_star / margin``
    separates the clean set with unit margin. ``noise`` is the feature-noise std
    as a fraction of the feature std; observed graphs keep the clean labels.
    """
    rng = np.random.default_rng(seed)
    layout = WeightLayout(labels, dims)
    w_star = WeightVector(layout, rng.normal(0, 1, layout.size))
    segs = [(5 * s, 5 * s + 4) for s in range(n_segments)]
    clean, observed = [], []
    tries = 0
    while len(clean) < n_graphs:
        tries += 1
        if tries > max_tries * n_graphs:
            raise RuntimeError("margin too large: planted graphs keep getting rejected")
        g = build_graph(segs, [None] * n_objects, _uniform_features(dims, rng, feature_scale))
        pots = potentials(w_star, g)
        y, best = solve_exact_potentials(pots, solver)
        if margin > 0:
            aug = loss_augmented_potentials(pots, y)
            scaled = aug.with_unary_bonus([margin * (b - u) - (b - u) for b, u in zip(aug.unary, pots.unary)],
                                          constant=(margin - 1.0) * len(y))
            _, v = solve_exact_potentials(scaled, solver)
            if v > best + 1e-9 * max(1.0, abs(best)):
                continue
        clean.append((g, y))
        if noise > 0:
            sd = float(np.std(np.concatenate([f for f in g.node_features + g.edge_features])))
            nodes = [f + rng.normal(0, noise * sd, f.shape) for f in g.node_features]
            edges = [f + rng.normal(0, noise * sd, f.shape) for f in g.edge_features]
            observed.append((_graph_with(g, nodes, edges), y))
        else:
            observed.append((g, y))
    return PlantedData(w_star, clean, observed)


def _uniform_features(dims: FeatureDims, rng, scale: float = 1.0) -> ArrayFeatures:
    def source(kind, key):
        return rng.uniform(0, scale, getattr(dims, kind))
    return ArrayFeatures(dims, source)


def labeling_from_truth(truth_labels: list[int]) -> Labeling:
    return Labeling(tuple(int(v) for v in truth_labels))
