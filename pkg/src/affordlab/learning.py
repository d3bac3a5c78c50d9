"""1-slack margin-rescaling cutting-plane training.

Each cut averages the joint-feature differences and the losses over all
training examples:

    w . mean_m[Psi(x_m, y_m) - Psi(x_m, ybar_m)] >= mean_m Delta(y_m, ybar_m) - xi

and the working-set QP  min 1/2 |w|^2 + C xi  is solved in its dual.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .graph import SegmentGraph
from .inference import SolverConfig, SolverLimitError, solve_loss_augmented
from .labeling import Labeling, RelaxedLabeling
from .labels import LabelSpace
from .model import WeightLayout, WeightVector, joint_feature_map

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    C: float = 1.0
    epsilon: float = 0.01
    max_iterations: int = 200
    oracle: str = "exact"
    threads: int = 1
    solver: SolverConfig = field(default_factory=SolverConfig)
    # branch-and-bound node budget for the quick separation pass; None always
    # runs the full solver
    quick_nodes: int | None = 50

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be positive")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.oracle not in ("exact", "relaxed"):
            raise ValueError(f"unknown oracle {self.oracle!r}")
        if self.quick_nodes is not None and self.quick_nodes < 1:
            raise ValueError("quick_nodes must be >= 1 or None")


class TrainingNotConverged(RuntimeError):
    def __init__(self, message, weights: WeightVector, diagnostics: dict):
        super().__init__(message)
        self.weights = weights
        self.diagnostics = diagnostics


def _indicators(y, graph: SegmentGraph, labels: LabelSpace | None):
    if isinstance(y, RelaxedLabeling):
        return y.y
    if labels is None:
        raise ValueError("a LabelSpace is needed to expand an integral labeling")
    return y.indicators(graph, labels)


def hamming_loss(y, y_hat, graph: SegmentGraph | None = None,
                 labels: LabelSpace | None = None) -> float:
    """Sum over nodes and labels of |y_i^k - yhat_i^k|.

    Two integral labelings are compared directly (2 per differing node); a
    relaxed labeling on either side needs ``graph`` and ``labels``.
    """
    if isinstance(y, Labeling) and isinstance(y_hat, Labeling):
        if len(y) != len(y_hat):
            raise ValueError("labelings have different lengths")
        return float(2 * sum(a != b for a, b in zip(y.labels, y_hat.labels)))
    a = _indicators(y, graph, labels)
    b = _indicators(y_hat, graph, labels)
    if len(a) != len(b) or any(u.shape != v.shape for u, v in zip(a, b)):
        raise ValueError("labelings have different shapes")
    return float(sum(np.abs(u - v).sum() for u, v in zip(a, b)))


def solve_restricted_qp(cuts: Sequence[tuple[np.ndarray, float]], C: float,
                        tol: float = 1e-10, max_steps: int = 100_000):
    """Minimize 1/2 |w|^2 + C xi subject to w . g_c >= l_c - xi for every cut.

    Pairwise coordinate ascent on the dual simplex sum(alpha) <= C, with a slack
    coordinate for the unused mass. Stops when the duality gap is below ``tol``.
    Returns (w, xi, alpha, gap).
    """
    m = len(cuts)
    if m == 0:
        return np.zeros(0), 0.0, np.zeros(0), 0.0
    G = np.stack([np.asarray(g, dtype=float) for g, _ in cuts])
    ell = np.array([float(l) for _, l in cuts])
    # coordinate 0 is the slack (g = 0, l = 0)
    K = np.zeros((m + 1, m + 1))
    K[1:, 1:] = G @ G.T
    L = np.concatenate([[0.0], ell])
    alpha = np.zeros(m + 1)
    alpha[0] = C
    grad = L - K @ alpha
    gap = math.inf
    for _ in range(max_steps):
        i = int(np.argmax(grad))
        gap = C * grad[i] - alpha @ grad
        if gap <= tol:
            break
        support = np.flatnonzero(alpha > 0)
        j = int(support[np.argmin(grad[support])])
        if grad[i] - grad[j] <= 0:
            break
        curv = K[i, i] + K[j, j] - 2.0 * K[i, j]
        step = alpha[j] if curv <= 0 else min(alpha[j], (grad[i] - grad[j]) / curv)
        alpha[i] += step
        alpha[j] -= step
        grad -= step * (K[:, i] - K[:, j])
    a = alpha[1:]
    w = a @ G
    xi = max(0.0, float(np.max(ell - G @ w)))
    return w, xi, a, float(gap)


def qp_objective(w: np.ndarray, xi: float, C: float) -> float:
    return 0.5 * float(w @ w) + C * xi


def _separate(w: WeightVector, example, config: TrainConfig, quick: bool):
    """Loss-augmented labeling for one example.

    In the quick pass a budget-limited search may stop early; its incumbent is
    still a valid (if not the most violated) constraint. Returns
    (psi difference, loss, labeling, exact flag).
    """
    graph, y = example
    # any maximizer gives a valid cut, so skip the tie-breaking search
    solver = replace(config.solver, lex_ties=False)
    exact = True
    if quick and config.oracle == "exact" and config.quick_nodes is not None:
        solver = replace(solver, max_nodes=min(solver.max_nodes, config.quick_nodes))
        try:
            ybar, _ = solve_loss_augmented(w, graph, y, mode="exact", config=solver)
        except SolverLimitError as exc:
            ybar, exact = exc.incumbent, False
    else:
        ybar, _ = solve_loss_augmented(w, graph, y, mode=config.oracle, config=solver)
    psi_true = joint_feature_map(graph, y, w.labels)
    psi_bar = joint_feature_map(graph, ybar, w.labels)
    return psi_true - psi_bar, hamming_loss(y, ybar, graph, w.labels), ybar, exact


def _map(fn, items, threads):
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def most_violated_cut(w: WeightVector, dataset, config: TrainConfig, quick: bool = False,
                      previous=None):
    """Average Psi difference and loss over the dataset at the current ``w``.

    With ``previous`` (per-example results of a quick pass) only the examples
    whose quick answer was not proven optimal are re-solved. Returns
    (g, loss, labelings, all exact).
    """
    if previous is None:
        parts = _map(lambda ex: _separate(w, ex, config, quick), dataset, config.threads)
    else:
        redo = [i for i, p in enumerate(previous) if not p[3]]
        fresh = _map(lambda i: _separate(w, dataset[i], config, False), redo, config.threads)
        parts = list(previous)
        for i, p in zip(redo, fresh):
            parts[i] = p
    M = len(dataset)
    g = sum(p[0] for p in parts) / M
    loss = sum(p[1] for p in parts) / M
    return g, float(loss), parts, all(p[3] for p in parts)


def train(dataset: Sequence[tuple[SegmentGraph, Labeling]], labels: LabelSpace,
          config: TrainConfig | None = None, log_records=None):
    """Cutting-plane training. Returns (weights, diagnostics).

    ``log_records``, if given, receives one dict per iteration with the
    iteration number, QP objective and maximum violation.
    """
    config = config or TrainConfig()
    if not dataset:
        raise ValueError("empty training set")
    dims = dataset[0][0].dims
    for g, y in dataset:
        if g.dims != dims:
            raise ValueError("training graphs disagree on feature dimensions")
        y.check(g, labels)
    layout = WeightLayout(labels, dims)
    w = WeightVector(layout)
    xi = 0.0
    cuts: list[tuple[np.ndarray, float]] = []
    trace = []
    for it in range(1, config.max_iterations + 1):
        g, loss, parts, exact = most_violated_cut(w, dataset, config, quick=True)
        violation = loss - float(w.values @ g) - xi
        if violation <= config.epsilon and not exact:
            # certify with the full solver before declaring convergence
            g, loss, parts, exact = most_violated_cut(w, dataset, config, previous=parts)
            violation = loss - float(w.values @ g) - xi
        rec = {"iteration": it, "objective": qp_objective(w.values, xi, config.C),
               "xi": xi, "max_violation": violation, "cuts": len(cuts), "exact": exact}
        trace.append(rec)
        if log_records is not None:
            log_records(rec)
        log.debug("iteration %d objective %.6g violation %.6g", it, rec["objective"], violation)
        if violation <= config.epsilon:
            diag = {"iterations": it, "converged": True, "trace": trace,
                    "objective": rec["objective"], "max_violation": violation, "xi": xi,
                    "cuts": len(cuts)}
            return w, diag
        cuts.append((g, loss))
        wv, xi, _, _ = solve_restricted_qp(cuts, config.C)
        w = w.with_values(wv)
    diag = {"iterations": config.max_iterations, "converged": False, "trace": trace,
            "objective": qp_objective(w.values, xi, config.C), "xi": xi, "cuts": len(cuts)}
    raise TrainingNotConverged(f"no convergence within {config.max_iterations} iterations", w, diag)


def format_trace(trace) -> str:
    """Diagnostics as JSON lines."""
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in trace)
