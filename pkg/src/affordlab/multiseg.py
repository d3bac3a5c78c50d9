"""Fusing labelings from several temporal segmentations.

Every hypothesis labels its own segments; the fused labeling lives on frames
(one sub-activity label per frame, one affordance per frame and object), the
common refinement of all hypotheses. A weight ``theta[n, k]`` scores
agreement of hypothesis ``n`` with the fused labeling on label ``k``; label
columns are the sub-activity labels followed by the affordance labels.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .graph import NodeKind, SegmentGraph
from .inference import SolverConfig, solve_exact_potentials
from .labeling import Labeling
from .labels import LabelSpace
from .model import WeightVector, potentials


class MultiSegError(ValueError):
    pass


@dataclass
class FrameLabeling:
    activity: np.ndarray      # (frames,)
    affordance: np.ndarray    # (frames, objects)

    def __post_init__(self):
        self.activity = np.asarray(self.activity, dtype=int)
        self.affordance = np.asarray(self.affordance, dtype=int).reshape(len(self.activity), -1)

    @property
    def num_frames(self) -> int:
        return len(self.activity)

    @property
    def n_objects(self) -> int:
        return self.affordance.shape[1]

    def __eq__(self, other):
        return (isinstance(other, FrameLabeling) and np.array_equal(self.activity, other.activity)
                and np.array_equal(self.affordance, other.affordance))

    def to_record(self, labels: LabelSpace | None = None) -> dict:
        if labels is None:
            return {"activity": self.activity.tolist(), "affordance": self.affordance.tolist()}
        return {"activity": [labels.subactivity_labels[k] for k in self.activity],
                "affordance": [[labels.affordance_labels[k] for k in row] for row in self.affordance]}


@dataclass
class ThetaWeights:
    values: np.ndarray   # (hypotheses, n_activity + n_affordance)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    def check(self, tol=1e-8) -> bool:
        return bool(np.all(np.abs(self.values.sum(axis=0) - 1.0) <= tol))

    @classmethod
    def uniform(cls, n_hyp: int, labels: LabelSpace) -> "ThetaWeights":
        return cls(np.full((n_hyp, labels.n_activity + labels.n_affordance), 1.0 / n_hyp))


def expand_to_frames(y: Labeling, graph: SegmentGraph) -> FrameLabeling:
    T = graph.segments[-1][1] + 1
    act = np.empty(T, dtype=int)
    aff = np.empty((T, graph.n_objects), dtype=int)
    for s, (a, b) in enumerate(graph.segments):
        act[a:b + 1] = y[graph.activity_node(s)]
        for o in range(graph.n_objects):
            aff[a:b + 1, o] = y[graph.object_node(s, o)]
    return FrameLabeling(act, aff)


def agreement_counts(y_h: FrameLabeling, y: FrameLabeling, labels: LabelSpace) -> np.ndarray:
    """Per label k: frame instances where both labelings say k (|K_a| + |K_o| entries)."""
    if y_h.num_frames != y.num_frames or y_h.n_objects != y.n_objects:
        raise MultiSegError("frame labelings cover different frames or objects")
    a = np.bincount(y.activity[y_h.activity == y.activity], minlength=labels.n_activity)
    m = y_h.affordance == y.affordance
    o = np.bincount(y.affordance[m], minlength=labels.n_affordance)
    return np.concatenate([a, o]).astype(float)


def phi_score(y_h: FrameLabeling, y: FrameLabeling, theta_n: np.ndarray, labels: LabelSpace) -> float:
    """Assignment score of hypothesis labels (already expanded to frames) against ``y``."""
    return float(np.asarray(theta_n) @ agreement_counts(y_h, y, labels))


def learn_theta(heldout: Sequence[tuple[Sequence[FrameLabeling], FrameLabeling]],
                labels: LabelSpace, counts: str = "mean") -> ThetaWeights:
    """Minimizer of 1/2 |theta|^2 - Phi subject to sum_n theta[n, k] = 1.

    Closed form per label: theta = a + (1 - sum(a)) / |H|, with ``a`` the
    agreement counts over the held-out set. With ``counts="mean"`` (default)
    they are divided by the number of frame instances, so theta does not grow
    with the size of the held-out set; ``"sum"`` uses the raw totals.
    """
    if counts not in ("mean", "sum"):
        raise ValueError(f"counts must be 'mean' or 'sum', not {counts!r}")
    if not heldout:
        raise MultiSegError("no held-out examples")
    H = len(heldout[0][0])
    if H == 0:
        raise MultiSegError("no hypotheses")
    a = np.zeros((H, labels.n_activity + labels.n_affordance))
    instances = 0
    for hyps, truth in heldout:
        if len(hyps) != H:
            raise MultiSegError("held-out examples disagree on the number of hypotheses")
        for n, y_h in enumerate(hyps):
            a[n] += agreement_counts(y_h, truth, labels)
        instances += truth.num_frames * (1 + truth.n_objects)
    if counts == "mean" and instances:
        a /= instances
    return ThetaWeights(theta_from_counts(a))


def theta_from_counts(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a + (1.0 - a.sum(axis=0, keepdims=True)) / a.shape[0]


def fuse(frame_labelings: Sequence[FrameLabeling], theta: ThetaWeights,
         labels: LabelSpace) -> FrameLabeling:
    """Per frame instance, the label with the largest theta-weighted vote (ties low)."""
    T, O = frame_labelings[0].num_frames, frame_labelings[0].n_objects
    Ka = labels.n_activity
    va = np.zeros((T, Ka))
    vo = np.zeros((T, O, labels.n_affordance))
    rows = np.arange(T)
    for n, f in enumerate(frame_labelings):
        th = theta.values[n]
        va[rows, f.activity] += th[f.activity]
        for o in range(O):
            vo[rows, o, f.affordance[:, o]] += th[Ka + f.affordance[:, o]]
    return FrameLabeling(va.argmax(axis=1), vo.argmax(axis=2) if O else np.zeros((T, 0), int))


def _phi_bonus(graph: SegmentGraph, fused: FrameLabeling, theta_n: np.ndarray,
               labels: LabelSpace) -> list[np.ndarray]:
    """Unary bonus making  E + Phi  a node-decomposable addition to the energy."""
    Ka = labels.n_activity
    bonus = []
    for i in range(graph.n_nodes):
        a, b = graph.segments[graph.node_segment(i)]
        if graph.node_kind(i) is NodeKind.ACTIVITY:
            counts = np.bincount(fused.activity[a:b + 1], minlength=Ka)
            bonus.append(theta_n[:Ka] * counts)
        else:
            o = graph.node_object(i)
            counts = np.bincount(fused.affordance[a:b + 1, o], minlength=labels.n_affordance)
            bonus.append(theta_n[Ka:] * counts)
    return bonus


@dataclass
class JointResult:
    fused: FrameLabeling
    hypothesis_labelings: list[Labeling]
    trace: list[dict] = field(default_factory=list)
    rounds: int = 0
    converged: bool = False


def joint_objective(pots_list, ys, fused, theta, labels) -> float:
    total = 0.0
    for n, (pots, y) in enumerate(zip(pots_list, ys)):
        total += pots.score(y)
        total += phi_score(expand_to_frames(y, pots.graph), fused, theta.values[n], labels)
    return total


def joint_infer(graphs: Sequence[SegmentGraph], models: Sequence[WeightVector],
                theta: ThetaWeights, labels: LabelSpace, max_rounds: int = 50,
                solver: SolverConfig | None = None, threads: int = 1) -> JointResult:
    """Alternate per-hypothesis MAP (with agreement bonus) and the fused vote."""
    if not graphs or len(graphs) != len(models) or len(graphs) != len(theta.values):
        raise MultiSegError("need one model and one theta row per hypothesis")
    T = graphs[0].segments[-1][1] + 1
    for g in graphs:
        if g.segments[0][0] != 0 or g.segments[-1][1] + 1 != T or g.n_objects != graphs[0].n_objects:
            raise MultiSegError("hypotheses cover different frame ranges or object sets")
    pots_list = [potentials(w, g) for w, g in zip(models, graphs)]

    def run(jobs):
        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                return list(pool.map(lambda p: solve_exact_potentials(p, solver)[0], jobs))
        return [solve_exact_potentials(p, solver)[0] for p in jobs]

    ys = run(pots_list)
    fused = fuse([expand_to_frames(y, g) for y, g in zip(ys, graphs)], theta, labels)
    trace = [{"round": 0, "step": "init",
              "objective": joint_objective(pots_list, ys, fused, theta, labels)}]
    converged = False
    rounds = 0
    for r in range(1, max_rounds + 1):
        rounds = r
        jobs = [p.with_unary_bonus(_phi_bonus(p.graph, fused, theta.values[n], labels))
                for n, p in enumerate(pots_list)]
        ys = run(jobs)
        trace.append({"round": r, "step": "hypotheses",
                      "objective": joint_objective(pots_list, ys, fused, theta, labels)})
        new = fuse([expand_to_frames(y, g) for y, g in zip(ys, graphs)], theta, labels)
        trace.append({"round": r, "step": "fused",
                      "objective": joint_objective(pots_list, ys, new, theta, labels)})
        if new == fused:
            converged = True
            break
        fused = new
    return JointResult(fused, list(ys), trace, rounds, converged)
