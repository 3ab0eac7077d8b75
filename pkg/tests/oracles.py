"""Independent reference implementations used as test oracles.

They favour plain loops and direct definitions over speed, and share no
code with the package beyond the ``Dataset`` container.
"""
import itertools
from fractions import Fraction

import numpy as np


# ---------------------------------------------------------------------------
# Group metrics, recounted from scratch

def brute_force_metrics(pred, labels, groups, n_groups):
    """Per-group accuracy/TPR/FPR and pairwise DEO/DEOdds; ``None`` marks undefined."""
    out = {"acc": [], "tpr": [], "fpr": []}
    for g in range(n_groups):
        members = [i for i in range(len(labels)) if groups[i] == g]
        pos = [i for i in members if labels[i] == 1]
        neg = [i for i in members if labels[i] == 0]
        correct = sum(1 for i in members if pred[i] == labels[i])
        out["acc"].append(correct / len(members) if members else None)
        out["tpr"].append(sum(pred[i] for i in pos) / len(pos) if pos else None)
        out["fpr"].append(sum(pred[i] for i in neg) / len(neg) if neg else None)
    out["deo"], out["deodds"] = {}, {}
    for a, b in itertools.combinations(range(n_groups), 2):
        ta, tb = out["tpr"][a], out["tpr"][b]
        fa, fb = out["fpr"][a], out["fpr"][b]
        out["deo"][(a, b)] = None if ta is None or tb is None else abs(ta - tb)
        gaps = (ta, tb, fa, fb)
        out["deodds"][(a, b)] = (None if any(v is None for v in gaps)
                                 else abs(ta - tb) + abs(fa - fb))
    accs = [a for a in out["acc"] if a is not None]
    out["min_acc"] = min(accs)
    return out


# ---------------------------------------------------------------------------
# Exhaustive bias-variance-noise enumeration

def one_nn(train_x, train_y):
    """Deterministic 1-NN on a 1-D grid; ties go to the lower x, then the lower label."""
    def predict(x):
        best = min(zip(train_x, train_y), key=lambda p: (abs(p[0] - x), p[0], p[1]))
        return best[1]
    return predict


def enumerate_training_sets(domain, p, size):
    """Every ordered training set of ``size`` i.i.d. draws with its exact probability.

    Points are drawn uniformly from ``domain`` and labelled Bernoulli(p[x]).
    """
    cells = [(x, y) for x in domain for y in (0, 1)]
    weight = {(x, 1): Fraction(1, len(domain)) * p[x] for x in domain}
    weight.update({(x, 0): Fraction(1, len(domain)) * (1 - p[x]) for x in domain})
    for combo in itertools.product(cells, repeat=size):
        w = Fraction(1)
        for c in combo:
            w *= weight[c]
        if w:
            yield [c[0] for c in combo], [c[1] for c in combo], w


def expected_error_table(domain, p, size, loss):
    """Exact ``E_D E_t[L(t, f_D(x))]`` per point plus the prediction distribution.

    ``loss`` is ``"squared"``, ``"zero_one"`` or ``"false_negative_rate"``; the
    last conditions on ``t = 1``.
    """
    pred_dist = {x: {0: Fraction(0), 1: Fraction(0)} for x in domain}
    for xs, ys, w in enumerate_training_sets(domain, p, size):
        f = one_nn(xs, ys)
        for x in domain:
            pred_dist[x][f(x)] += w
    err = {}
    for x in domain:
        q1 = pred_dist[x][1]
        if loss == "false_negative_rate":
            err[x] = 1 - q1                       # t = 1: wrong iff prediction is 0
        else:
            # for 0/1 predictions squared and zero-one losses coincide pointwise
            err[x] = p[x] * (1 - q1) + (1 - p[x]) * q1
    return pred_dist, err


def closed_form_terms(p_x, q1, loss):
    """Closed-form (N, B, V, c1, c2) for one point from label and prediction laws."""
    if loss == "squared":
        y_star = p_x                              # conditional mean
        mean_pred = q1
        N = p_x * (1 - p_x)
        B = (y_star - mean_pred) ** 2
        V = q1 * (1 - q1)
        return N, B, V, 1, 1
    if loss == "false_negative_rate":
        p_x = Fraction(1)
    y_star = 1 if p_x > Fraction(1, 2) else 0 if p_x < Fraction(1, 2) else 1
    y_m = 1 if q1 >= Fraction(1, 2) else 0
    N = min(p_x, 1 - p_x) if p_x != Fraction(1, 2) else Fraction(1, 2)
    B = int(y_m != y_star)
    V = q1 if y_m == 0 else 1 - q1
    p_opt = q1 if y_star == 1 else 1 - q1
    c1 = 2 * p_opt - 1
    c2 = 1 if y_m == y_star else -1
    return N, B, V, c1, c2


# ---------------------------------------------------------------------------
# Simplex geometry

def barycentric(points, vertices):
    """Barycentric coordinates of 2-D ``points`` in the triangle ``vertices``."""
    V = np.asarray(vertices, dtype=float)
    T = np.column_stack([V[1] - V[0], V[2] - V[0]])
    lam12 = np.linalg.solve(T, (np.asarray(points) - V[0]).T).T
    return np.column_stack([1 - lam12.sum(axis=1), lam12])
