"""MAP and loss-augmented MAP over a segment graph.

Three solvers share one objective, the energy written over per-(node, label)
indicator variables:

* :func:`solve_relaxed` maximizes the linear relaxation without one-label
  constraints by roof duality (QPBO): the quadratic pseudo-Boolean function is
  turned into a doubled flow network whose minimum cut gives a half-integral
  optimum.
* :func:`solve_exact` adds the exactly-one-label constraints and solves by
  branch and bound over node labels, bounding each subproblem with the roof
  dual and with an independent per-term maximum.
* :func:`brute_force_oracle` enumerates every labeling.

Ties go to the lowest label index, then the lowest node index, i.e. the
lexicographically smallest labeling among equal scores.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .graph import SegmentGraph
from .labeling import Labeling, RelaxedLabeling
from .maxflow import FlowNetwork
from .model import Potentials, WeightVector, potentials


@dataclass(frozen=True)
class SolverConfig:
    max_nodes: int = 200_000
    tolerance: float = 1e-9
    time_budget: float | None = None
    # resolve exact ties to the lexicographically smallest labeling; with many
    # tied optima this can cost exponential search, so callers that only need
    # some maximizer switch it off
    lex_ties: bool = True


class SolverLimitError(RuntimeError):
    """Branch and bound hit its node or time budget; carries the incumbent."""

    def __init__(self, message, incumbent: Labeling | None, value: float):
        super().__init__(message)
        self.incumbent = incumbent
        self.value = value


class InstanceTooLarge(ValueError):
    pass


# -- roof duality ---------------------------------------------------------------

def _qpbo(lin: np.ndarray, pairs: list[tuple[np.ndarray, np.ndarray, np.ndarray]]):
    """Half-integral maximizer of ``sum lin[p] x_p + sum b x_p x_q`` over [0,1]^n.

    ``pairs`` holds (p, q, b) index/coefficient arrays. Returns x in {0, .5, 1}.
    """
    n = len(lin)
    if n == 0:
        return np.zeros(0)
    # minimize E = -f; unaries collect the linear parts of rewritten pair terms
    theta = -np.asarray(lin, dtype=float).copy()
    edges_u, edges_v, edges_c = [], [], []
    for p, q, b in pairs:
        c = -b
        neg = c < 0
        if np.any(neg):
            pn, qn, cn = p[neg], q[neg], -c[neg]
            np.add.at(theta, pn, c[neg])
            # x_p (1 - x_q): q -> p and pbar -> qbar
            edges_u += [2 * qn, 2 * pn + 1]
            edges_v += [2 * pn, 2 * qn + 1]
            edges_c += [cn, cn]
        pos = c > 0
        if np.any(pos):
            pp, qp, cp = p[pos], q[pos], c[pos]
            # x_p x_q: qbar -> p and pbar -> q
            edges_u += [2 * qp + 1, 2 * pp + 1]
            edges_v += [2 * pp, 2 * qp]
            edges_c += [cp, cp]
    s, t = 2 * n, 2 * n + 1
    idx = np.arange(n)
    tp = theta > 0
    tn = theta < 0
    edges_u += [np.full(tp.sum(), s), 2 * idx[tp] + 1, 2 * idx[tn], np.full(tn.sum(), s)]
    edges_v += [2 * idx[tp], np.full(tp.sum(), t), np.full(tn.sum(), t), 2 * idx[tn] + 1]
    edges_c += [theta[tp], theta[tp], -theta[tn], -theta[tn]]
    U = np.concatenate(edges_u).astype(int)
    V = np.concatenate(edges_v).astype(int)
    C = np.concatenate(edges_c)
    net = FlowNetwork(2 * n + 2)
    scale = float(C.max()) if C.size else 0.0
    eps = 1e-13 * max(scale, 1e-300)
    for u, v, c in zip(U.tolist(), V.tolist(), C.tolist()):
        net.add_edge(u, v, c)
    net.max_flow(s, t, eps)
    src = net.source_side(s, eps)
    in_t = np.array([not src[k] for k in range(2 * n)], dtype=float)
    return (in_t[0::2] + 1.0 - in_t[1::2]) / 2.0


def _z_from_y(yi: np.ndarray, yj: np.ndarray, p: np.ndarray) -> np.ndarray:
    hi = np.minimum(yi[:, None], yj[None, :])
    lo = np.maximum(0.0, yi[:, None] + yj[None, :] - 1.0)
    return np.where(p > 0, hi, lo)


def _relaxed_over(pots: Potentials, fixed: np.ndarray | None = None):
    """Roof-dual solve with some nodes clamped (``fixed[i] >= 0``).

    Returns (y list, z list, score) for the full graph.
    """
    g = pots.graph
    n = g.n_nodes
    if fixed is None:
        fixed = np.full(n, -1)
    offset = np.full(n, -1)
    lin_parts = []
    pos = 0
    const = pots.constant
    unary = [u.copy() for u in pots.unary]
    for e, P in zip(g.edges, pots.pair):
        fi, fj = fixed[e.i], fixed[e.j]
        if fi >= 0 and fj < 0:
            unary[e.j] = unary[e.j] + P[fi, :]
        elif fj >= 0 and fi < 0:
            unary[e.i] = unary[e.i] + P[:, fj]
        elif fi >= 0 and fj >= 0:
            const += P[fi, fj]
    for i in range(n):
        if fixed[i] >= 0:
            const += unary[i][fixed[i]]
        else:
            offset[i] = pos
            lin_parts.append(unary[i])
            pos += len(unary[i])
    lin = np.concatenate(lin_parts) if lin_parts else np.zeros(0)
    pairs = []
    for e, P in zip(g.edges, pots.pair):
        if fixed[e.i] < 0 and fixed[e.j] < 0:
            Ki, Kj = P.shape
            p = offset[e.i] + np.repeat(np.arange(Ki), Kj)
            q = offset[e.j] + np.tile(np.arange(Kj), Ki)
            pairs.append((p, q, P.ravel()))
    x = _qpbo(lin, pairs)
    y = []
    for i in range(n):
        K = len(pots.unary[i])
        if fixed[i] >= 0:
            v = np.zeros(K)
            v[fixed[i]] = 1.0
        else:
            v = x[offset[i]:offset[i] + K].copy()
        y.append(v)
    z = [_z_from_y(y[e.i], y[e.j], P) for e, P in zip(g.edges, pots.pair)]
    r = RelaxedLabeling(y, z)
    return r, pots.relaxed_score(r)


def solve_relaxed_potentials(pots: Potentials) -> tuple[RelaxedLabeling, float]:
    return _relaxed_over(pots)


def solve_relaxed(w: WeightVector, graph: SegmentGraph) -> tuple[RelaxedLabeling, float]:
    """Half-integral optimum of the relaxed MAP problem and its objective value."""
    return solve_relaxed_potentials(potentials(w, graph))


# -- exact solve ----------------------------------------------------------------

def _independent_bound(pots: Potentials, fixed: np.ndarray) -> float:
    b = pots.constant
    for i, u in enumerate(pots.unary):
        b += u[fixed[i]] if fixed[i] >= 0 else u.max()
    for e, P in zip(pots.graph.edges, pots.pair):
        fi, fj = fixed[e.i], fixed[e.j]
        if fi >= 0 and fj >= 0:
            b += P[fi, fj]
        elif fi >= 0:
            b += P[fi, :].max()
        elif fj >= 0:
            b += P[:, fj].max()
        else:
            b += P.max()
    return float(b)


def _icm(pots: Potentials, labels: list[int], frozen=None) -> list[int]:
    """Coordinate ascent on node labels; strict improvements only."""
    g = pots.graph
    nbrs = [[] for _ in range(g.n_nodes)]
    for e, P in zip(g.edges, pots.pair):
        nbrs[e.i].append((e.j, P, True))
        nbrs[e.j].append((e.i, P, False))
    labels = list(labels)
    improved = True
    sweeps = 0
    while improved and sweeps < 100:
        improved = False
        sweeps += 1
        for i in range(g.n_nodes):
            if frozen is not None and frozen[i] >= 0:
                continue
            local = pots.unary[i].copy()
            for j, P, first in nbrs[i]:
                local += P[:, labels[j]] if first else P[labels[j], :]
            k = int(np.argmax(local))
            if local[k] > local[labels[i]] + 1e-12:
                labels[i] = k
                improved = True
    return labels


def _icm_fixed(pots: Potentials, labels: list[int], fixed: np.ndarray) -> list[int]:
    return _icm(pots, labels, frozen=fixed)


class _LocalLP:
    """Local-polytope LP with one-label rows; clamped nodes become variable bounds."""

    def __init__(self, pots: Potentials):
        self.pots = pots
        g = pots.graph
        self.y_off = []
        n = 0
        for u in pots.unary:
            self.y_off.append(n)
            n += len(u)
        z_off = []
        for P in pots.pair:
            z_off.append(n)
            n += P.size
        self.n_cols = n
        self.c = -np.concatenate(list(pots.unary) + [P.ravel() for P in pots.pair])
        rows, cols, vals = [], [], []
        r = 0
        for i, u in enumerate(pots.unary):
            rows += [r] * len(u)
            cols += range(self.y_off[i], self.y_off[i] + len(u))
            vals += [1.0] * len(u)
            r += 1
        n_sum_rows = r
        for e, P, zo in zip(g.edges, pots.pair, z_off):
            Ki, Kj = P.shape
            grid = zo + np.arange(Ki * Kj).reshape(Ki, Kj)
            # sum_k z[l, k] = y_i[l] and sum_l z[l, k] = y_j[k]
            for l in range(Ki):
                rows += [r] * (Kj + 1)
                cols += grid[l].tolist() + [self.y_off[e.i] + l]
                vals += [1.0] * Kj + [-1.0]
                r += 1
            for k in range(Kj):
                rows += [r] * (Ki + 1)
                cols += grid[:, k].tolist() + [self.y_off[e.j] + k]
                vals += [1.0] * Ki + [-1.0]
                r += 1
        self.A = sparse.csr_matrix((vals, (rows, cols)), shape=(r, n))
        self.b = np.zeros(r)
        self.b[:n_sum_rows] = 1.0

    def solve(self, fixed: np.ndarray):
        lb = np.zeros(self.n_cols)
        ub = np.ones(self.n_cols)
        for i in np.flatnonzero(fixed >= 0):
            o, K = self.y_off[i], len(self.pots.unary[i])
            ub[o:o + K] = 0.0
            lb[o + fixed[i]] = ub[o + fixed[i]] = 1.0
        res = linprog(self.c, A_eq=self.A, b_eq=self.b, bounds=np.column_stack([lb, ub]),
                      method="highs")
        if res.status != 0:
            raise RuntimeError(f"LP bound failed: {res.message}")
        y = [res.x[o:o + len(u)] for o, u in zip(self.y_off, self.pots.unary)]
        return y, float(-res.fun + self.pots.constant)


def solve_exact_potentials(pots: Potentials, config: SolverConfig | None = None
                           ) -> tuple[Labeling, float]:
    config = config or SolverConfig()
    g = pots.graph
    n = g.n_nodes
    if n == 0:
        return Labeling([]), float(pots.constant)
    start = time.monotonic()

    root_relaxed, _ = _relaxed_over(pots)
    best = [0] * n
    best_val = pots.score(Labeling(best))

    def consider(labels):
        nonlocal best, best_val
        labels = list(labels)
        v = pots.score(Labeling(labels))
        tol = _tol(config, best_val)
        if v > best_val + tol or (abs(v - best_val) <= tol and labels < best):
            best, best_val = labels, max(v, best_val)

    consider(_icm(pots, root_relaxed.to_labeling().labels))
    if root_relaxed.is_integral_onehot():
        # the roof dual is attained by a feasible labeling
        return Labeling(best), float(best_val)

    lp = _LocalLP(pots)
    # best-first on the LP bound; the counter keeps pops deterministic
    root = np.full(n, -1)
    heap = [(-math.inf, 0, root)]
    counter = 1
    explored = 0
    while heap:
        parent_bound, _, fixed = heapq.heappop(heap)
        explored += 1
        if explored > config.max_nodes or (
                config.time_budget is not None and time.monotonic() - start > config.time_budget):
            raise SolverLimitError(f"branch and bound stopped after {explored - 1} nodes",
                                   Labeling(best), best_val)
        tol = _tol(config, best_val)
        prefix_min = [int(k) if k >= 0 else 0 for k in fixed]

        def prunable(bound):
            if not config.lex_ties:
                return bound <= best_val + tol
            return bound < best_val - tol or (bound <= best_val + tol and prefix_min >= best)

        if prunable(-parent_bound) or prunable(_independent_bound(pots, fixed)):
            continue
        y, bound = lp.solve(fixed)
        if prunable(bound):
            continue
        rounded = [int(fixed[i]) if fixed[i] >= 0 else int(np.argmax(v)) for i, v in enumerate(y)]
        frac = [i for i in range(n) if fixed[i] < 0 and not _onehot(y[i], 1e-7)]
        if not frac:
            consider(rounded)
            continue
        consider(_icm_fixed(pots, rounded, fixed))
        if prunable(bound):
            continue
        # most ambiguous node first: smallest top indicator
        branch = min(frac, key=lambda i: (y[i].max(), i))
        for k in range(len(y[branch])):
            child = fixed.copy()
            child[branch] = k
            if np.all(child >= 0):
                consider(child.tolist())
            else:
                heapq.heappush(heap, (-bound, counter, child))
                counter += 1
    return Labeling(best), float(best_val)


def _onehot(v, tol=1e-9):
    return np.all(np.abs(v - np.round(v)) <= tol) and abs(v.sum() - 1.0) <= tol


def _tol(config: SolverConfig, ref: float) -> float:
    return config.tolerance * max(1.0, abs(ref)) if math.isfinite(ref) else config.tolerance


def solve_exact(w: WeightVector, graph: SegmentGraph, config: SolverConfig | None = None
                ) -> tuple[Labeling, float]:
    """Best labeling with exactly one label per node, and its energy."""
    return solve_exact_potentials(potentials(w, graph), config)


# -- loss augmentation --------------------------------------------------------

def loss_augmented_potentials(pots: Potentials, y_true: Labeling) -> Potentials:
    """Fold the Hamming loss against ``y_true`` into the unary terms.

    Per node the loss is ``1 - y^t + sum_{k != t} y^k``, linear in indicators.
    """
    bonus = []
    for u, t in zip(pots.unary, y_true.labels):
        b = np.ones(len(u))
        b[t] = -1.0
        bonus.append(b)
    return pots.with_unary_bonus(bonus, constant=float(len(y_true)))


def solve_loss_augmented(w: WeightVector, graph: SegmentGraph, y_true: Labeling,
                         mode: str = "exact", config: SolverConfig | None = None):
    """Maximize score plus Hamming loss against ``y_true``.

    ``mode="relaxed"`` returns the roof-dual half-integral maximizer, whose value
    upper-bounds the integral maximum. ``mode="exact"`` runs branch and bound
    (warm-started from that relaxation) under one-label-per-node constraints.
    """
    y_true.check(graph, w.labels)
    pots = loss_augmented_potentials(potentials(w, graph), y_true)
    if mode == "relaxed":
        return solve_relaxed_potentials(pots)
    if mode == "exact":
        return solve_exact_potentials(pots, config)
    raise ValueError(f"unknown loss-augmented mode {mode!r}")


# -- oracle ---------------------------------------------------------------------

MAX_ENUMERATION = 10 ** 7


def brute_force_potentials(pots: Potentials) -> tuple[Labeling, float]:
    sizes = [len(u) for u in pots.unary]
    if math.prod(sizes) > MAX_ENUMERATION:
        raise InstanceTooLarge(f"{math.prod(sizes)} labelings exceed the enumeration limit")
    best, best_val = None, -math.inf
    for labels in itertools.product(*[range(k) for k in sizes]):
        v = pots.score(Labeling(labels))
        if v > best_val:
            best, best_val = labels, v
    return Labeling(best), float(best_val)


def brute_force_oracle(w: WeightVector, graph: SegmentGraph,
                       loss_against: Labeling | None = None) -> tuple[Labeling, float]:
    """Exhaustive argmax (first labeling in lexicographic order among ties)."""
    pots = potentials(w, graph)
    if loss_against is not None:
        pots = loss_augmented_potentials(pots, loss_against)
    return brute_force_potentials(pots)
