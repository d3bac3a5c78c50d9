"""Random instance generators shared by the test modules."""

import numpy as np
from scipy.optimize import linprog

from affordlab.graph import FeatureDims, build_graph, random_features
from affordlab.labels import LabelSpace
from affordlab.model import WeightLayout, WeightVector

SMALL_DIMS = FeatureDims(activity=3, object=3, oo=2, oa=2, oo_temporal=2, aa_temporal=2)


def small_labels(n_act=3, n_aff=3):
    return LabelSpace(tuple(f"a{k}" for k in range(n_act)), tuple(f"o{k}" for k in range(n_aff)),
                      ("h0", "h1"))


def random_instance(rng, n_segments=None, n_objects=None, labels=None, dims=SMALL_DIMS,
                    max_nodes=8):
    if n_segments is None:
        while True:
            n_segments = int(rng.integers(1, 5))
            n_objects = int(rng.integers(0, 4))
            if n_segments * (n_objects + 1) <= max_nodes:
                break
    if labels is None:
        labels = small_labels(int(rng.integers(1, 4)), int(rng.integers(1, 4)))
    segs = [(5 * s, 5 * s + 4) for s in range(n_segments)]
    graph = build_graph(segs, list(range(n_objects)), random_features(dims, rng))
    layout = WeightLayout(labels, dims)
    w = WeightVector(layout, rng.uniform(-1, 1, size=layout.size))
    return w, graph, labels


def lp_relaxation_value(pots):
    """Optimal value of the indicator LP (no one-label rows), via HiGHS."""
    g = pots.graph
    offs, n = [], 0
    for u in pots.unary:
        offs.append(n)
        n += len(u)
    c = list(np.concatenate(pots.unary)) if n else []
    A, b = [], []
    zoff = n
    cols = n + sum(P.size for P in pots.pair)
    c = c + [0.0] * (cols - n)
    for e, P in zip(g.edges, pots.pair):
        for l in range(P.shape[0]):
            for k in range(P.shape[1]):
                z = zoff
                zoff += 1
                c[z] = P[l, k]
                yi, yj = offs[e.i] + l, offs[e.j] + k
                for row in ({z: 1, yi: -1}, {z: 1, yj: -1}, {yi: 1, yj: 1, z: -1}):
                    r = np.zeros(cols)
                    for key, val in row.items():
                        r[key] = val
                    A.append(r)
                    b.append(1.0 if len(row) == 3 else 0.0)
    res = linprog(-np.array(c), A_ub=np.array(A) if A else None, b_ub=np.array(b) if b else None,
                  bounds=[(0, 1)] * cols, method="highs")
    assert res.status == 0
    return -res.fun + pots.constant
