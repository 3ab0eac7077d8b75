"""Bias-variance-noise decomposition of per-point and per-group expected error.

For a test point x with label distribution p = P(Y=1 | x) and models f_r
trained on random training sets r = 1..R:

* optimal prediction y_*: argmin over y' of E_y L(y, y')
* main prediction y_m: argmin over y' of E_r L(f_r(x), y')
* noise N = E_y L(y, y_*), bias B = L(y_*, y_m), variance V = E_r L(y_m, f_r(x))

and the expected error decomposes exactly as ``err = c1 N + B + c2 V``.  For
squared loss c1 = c2 = 1.  For binary zero-one loss c2 = +1 when y_m = y_*
and -1 otherwise, and c1 = 2 P_r(f_r(x) = y_*) - 1.

Group aggregates average ``c1 N``, ``B`` and ``c2 V`` over the group, so the
expected fairness violation between two groups is
``|N_A + B_A + V_A - (N_B + B_B + V_B)|``.  The weighted variance can be
negative at points where c2 = -1, so the unweighted means are reported too.
"""
from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .data import Dataset, TrueConditional, resample
from .models import DivergenceError, PredictionModel, predict_score

__all__ = [
    "LOSSES",
    "ReplicateError",
    "PointDecomposition",
    "GroupDecomposition",
    "DecompositionReport",
    "loss_fn",
    "optimal_prediction",
    "main_prediction",
    "decompose_predictions",
    "train_replicates",
    "decompose_point",
    "decompose_fairness",
]

logger = logging.getLogger(__name__)

LOSSES = ("squared", "zero_one", "false_negative_rate")


class ReplicateError(RuntimeError):
    pass


def _check_loss(loss: str) -> str:
    if loss not in LOSSES:
        raise ValueError(f"loss must be one of {LOSSES}, got {loss!r}")
    return loss


def loss_fn(loss: str, y, y_pred) -> np.ndarray:
    y, y_pred = np.asarray(y, dtype=float), np.asarray(y_pred, dtype=float)
    if _check_loss(loss) == "squared":
        return (y - y_pred) ** 2
    return (y != y_pred).astype(float)


def optimal_prediction(x, cond: TrueConditional | None, loss: str, groups=None,
                       observed_label=None) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(y_star, noise)`` for each row of ``x``.

    Without a conditional, ``observed_label`` must be given: the observed label
    is taken as the optimal prediction and the noise is zero (one label per
    point, no label disagreement).
    """
    if cond is None:
        if observed_label is None:
            raise ValueError("no label distribution: pass observed_label for single-label mode")
        p = np.asarray(observed_label, dtype=float).ravel()
    else:
        p = np.asarray(cond(x, groups), dtype=float).ravel()
    return _optimal_from_p(p, loss)


def _optimal_from_p(p: np.ndarray, loss: str):
    if _check_loss(loss) == "squared":
        return p.copy(), p * (1.0 - p)
    y_star = (p >= 0.5).astype(float)
    return y_star, np.where(y_star == 1, 1.0 - p, p)


def _norm_weights(R: int, weights) -> np.ndarray:
    if weights is None:
        return np.full(R, 1.0 / R)
    w = np.asarray(weights, dtype=float)
    if w.shape != (R,) or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be non-negative, one per replicate")
    return w / w.sum()


def main_prediction(predictions, loss: str, weights=None) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(y_main, tie_mask)`` from an (R, m) array of replicate predictions.

    Squared loss takes the mean; zero-one losses take the majority vote with
    exact ties resolved to 1.
    """
    P = np.asarray(predictions, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if P.shape[0] == 0:
        raise ValueError("need at least one replicate")
    w = _norm_weights(P.shape[0], weights)
    if _check_loss(loss) == "squared":
        return w @ P, np.zeros(P.shape[1], dtype=bool)
    vote = w @ (P == 1)
    tie = np.isclose(vote, 0.5, rtol=0, atol=1e-12)
    return np.where(tie | (vote > 0.5), 1.0, 0.0), tie


@dataclass
class PointDecomposition:
    """Per-point terms; arrays are aligned with the decomposed rows."""

    row: np.ndarray
    y_star: np.ndarray
    y_main: np.ndarray
    N: np.ndarray
    B: np.ndarray
    V: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    err: np.ndarray
    tie: np.ndarray
    replicate_count: int

    def reconstruction(self) -> np.ndarray:
        return self.c1 * self.N + self.B + self.c2 * self.V

    def take(self, mask) -> "PointDecomposition":
        kw = {k: getattr(self, k)[mask] for k in
              ("row", "y_star", "y_main", "N", "B", "V", "c1", "c2", "err", "tie")}
        return PointDecomposition(replicate_count=self.replicate_count, **kw)


def decompose_predictions(predictions, p, loss: str, weights=None,
                          rows=None) -> PointDecomposition:
    """Decompose given an (R, m) array of replicate predictions.

    ``p`` holds P(Y=1 | x) per point; pass the observed 0/1 labels for
    single-label mode.  For the zero-one losses predictions must be hard 0/1
    labels; for squared loss they are scores.  ``weights`` lets the caller
    supply an exact distribution over training sets instead of equal weights.

    The false-negative-rate loss is zero-one loss on whichever points are
    passed in; :func:`decompose_fairness` passes only points with Y = 1.
    """
    P = np.asarray(predictions, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    p = np.asarray(p, dtype=float).ravel()
    R, m = P.shape
    if p.shape != (m,):
        raise ValueError(f"{m} points but {p.shape} label probabilities")
    w = _norm_weights(R, weights)
    y_star, N = _optimal_from_p(p, loss)
    y_main, tie = main_prediction(P, loss, w)
    B = loss_fn(loss, y_star, y_main)
    V = w @ loss_fn(loss, y_main[None, :], P)
    # expected loss against a Bernoulli(p) label, per replicate
    err = w @ (p * loss_fn(loss, 1.0, P) + (1.0 - p) * loss_fn(loss, 0.0, P))
    if loss == "squared":
        c1 = np.ones(m)
        c2 = np.ones(m)
    else:
        agree = w @ (P == y_star[None, :])
        c1 = 2.0 * agree - 1.0
        c2 = np.where(y_main == y_star, 1.0, -1.0)
    rows = np.arange(m) if rows is None else np.asarray(rows)
    return PointDecomposition(rows, y_star, y_main, N, B, V, c1, c2, err, tie, R)


Trainer = Callable[[Dataset, int], "PredictionModel | Callable"]


def _scores(model, X) -> np.ndarray:
    if isinstance(model, PredictionModel):
        return predict_score(model, X)
    return np.asarray(model(X), dtype=float)


def train_replicates(trainer: Trainer, base: Dataset, X, R: int, seed, mode: str = "bootstrap",
                     subsample_size=0.5) -> tuple[np.ndarray, dict]:
    """Train on R resampled copies of ``base`` and score ``X`` with each model.

    Returns the (R_ok, m) score array and bookkeeping about failed replicates.
    Replicates whose training diverges are skipped; fewer than half succeeding
    is an error.
    """
    if R < 2:
        raise ValueError("need at least 2 replicates")
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(R)]
    scores, failed = [], []
    for r, s in enumerate(seeds):
        rs = resample(base, mode, s, subsample_size)
        try:
            scores.append(_scores(trainer(rs, s), X))
        except DivergenceError as exc:
            logger.warning("replicate %d diverged: %s", r, exc)
            failed.append(r)
    if len(scores) * 2 < R:
        raise ReplicateError(f"only {len(scores)} of {R} replicates trained successfully")
    info = {"replicates": R, "succeeded": len(scores), "failed": failed,
            "resampling": mode, "seed": seed}
    if mode == "subsample":
        info["subsample_size"] = subsample_size
    return np.vstack(scores), info


def _predictions_for(scores: np.ndarray, loss: str) -> np.ndarray:
    return scores if loss == "squared" else (scores >= 0.5).astype(float)


def decompose_point(x, y_obs, cond: TrueConditional | None, trainer: Trainer, base: Dataset,
                    R: int = 41, loss: str = "zero_one", seed=0, group=None,
                    mode: str = "bootstrap") -> PointDecomposition:
    """Decompose the expected error at a single point."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    scores, _ = train_replicates(trainer, base, x, R, seed, mode)
    if cond is None:
        p = np.array([float(y_obs)])
    else:
        p = np.asarray(cond(x, None if group is None else [group]), dtype=float)
    return decompose_predictions(_predictions_for(scores, loss), p, _check_loss(loss))


@dataclass
class GroupDecomposition:
    name: str
    count: int
    N: float
    B: float
    V: float
    N_raw: float
    V_raw: float
    err: float
    regime_ratio: float

    @property
    def dominant(self) -> str:
        """``"bias_noise"`` when ``B + N`` outweighs ``V``, else ``"variance"``."""
        return "bias_noise" if self.regime_ratio > 1 else "variance"

    def to_dict(self) -> dict:
        return dict(self.__dict__, dominant=self.dominant)


@dataclass
class DecompositionReport:
    loss: str
    groups: list[GroupDecomposition]
    e_fair: dict
    variance_gap: dict
    meta: dict
    points: PointDecomposition | None = field(default=None, repr=False)
    point_groups: np.ndarray | None = field(default=None, repr=False)
    e_fair_se: dict = field(default_factory=dict)

    def group(self, name_or_index) -> GroupDecomposition:
        if isinstance(name_or_index, int):
            return self.groups[name_or_index]
        return next(g for g in self.groups if g.name == name_or_index)

    @property
    def dominant(self) -> str:
        """Dominant term of the group with the largest error."""
        return max(self.groups, key=lambda g: g.err).dominant

    def to_dict(self) -> dict:
        return {"loss": self.loss, "groups": [g.to_dict() for g in self.groups],
                "dominant": self.dominant,
                "e_fair": self.e_fair, "variance_gap": self.variance_gap,
                "e_fair_se": self.e_fair_se,
                "meta": self.meta}

    def write_points(self, path, group_names, header_comment: str | None = None) -> None:
        pts = self.points
        cols = ["row", "group", "y_star", "y_main", "N", "B", "V", "c1", "c2", "err", "tie"]
        with Path(path).open("w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for i in range(len(pts.row)):
                w.writerow([int(pts.row[i]), group_names[self.point_groups[i]]]
                           + [format(float(getattr(pts, c)[i]), ".17g") for c in cols[2:-1]]
                           + [int(pts.tie[i])])


def _aggregate(pts: PointDecomposition, name: str) -> GroupDecomposition:
    N = float(np.mean(pts.c1 * pts.N))
    B = float(np.mean(pts.B))
    V = float(np.mean(pts.c2 * pts.V))
    N_raw, V_raw = float(np.mean(pts.N)), float(np.mean(pts.V))
    ratio = (B + N_raw) / V_raw if V_raw > 0 else float("inf")
    return GroupDecomposition(name, len(pts.row), N, B, V, N_raw, V_raw,
                              float(np.mean(pts.err)), ratio)


def decompose_fairness(test: Dataset, cond: TrueConditional | None, trainer: Trainer,
                       base: Dataset, R: int = 41, loss: str = "zero_one", seed=0,
                       mode: str = "bootstrap", subsample_size=0.5) -> DecompositionReport:
    """Per-group decomposition of test error and the expected fairness violation.

    ``base`` is the training set that replicates are resampled from.  With a
    ``cond`` the label distribution is taken from it, otherwise single-label
    mode is used.  The false-negative-rate loss only looks at test rows with
    label 1.  For more than two groups ``e_fair`` and ``variance_gap`` hold
    one entry per pair.
    """
    _check_loss(loss)
    rows = np.arange(test.n)
    if loss == "false_negative_rate":
        rows = rows[test.labels == 1]
    sub = test.subset(rows)
    present = np.unique(sub.groups)
    missing = [test.group_names[g] for g in range(test.n_groups) if g not in present]
    if missing:
        raise ValueError(f"group(s) {missing} absent from the decomposed test rows")
    scores, info = train_replicates(trainer, base, sub.features, R, seed, mode, subsample_size)
    p = sub.labels.astype(float) if cond is None else cond(sub.features, sub.groups)
    pts = decompose_predictions(_predictions_for(scores, loss), p, loss, rows=rows)
    groups = [_aggregate(pts.take(sub.groups == g), test.group_names[g])
              for g in range(test.n_groups)]
    e_fair, vgap, se = {}, {}, {}
    for a, b in itertools.combinations(range(len(groups)), 2):
        ga, gb = groups[a], groups[b]
        key = f"{ga.name}|{gb.name}"
        e_fair[key] = abs(ga.N + ga.B + ga.V - (gb.N + gb.B + gb.V))
        vgap[key] = abs(ga.V - gb.V)
        # sampling error of the gap over test points
        ea, eb = pts.err[sub.groups == a], pts.err[sub.groups == b]
        se[key] = float(np.sqrt(np.var(ea, ddof=1) / ea.size + np.var(eb, ddof=1) / eb.size)
                        if min(ea.size, eb.size) > 1 else np.nan)
    meta = dict(info, loss=loss, ties=int(pts.tie.sum()),
                label_model="conditional" if cond is not None else "single_label")
    return DecompositionReport(loss, groups, e_fair, vgap, meta, pts, sub.groups, se)
