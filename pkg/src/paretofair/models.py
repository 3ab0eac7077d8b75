"""Small binary classifiers trained with SGD, with an optional DEO penalty.

Two model kinds share one flat parameter vector layout:

* ``logistic``: ``[w (d), b]``
* ``mlp``: ``[W1 (d*h, row-major), b1 (h), w2 (h), b2]`` with a tanh hidden layer

The training objective is the mean binary cross-entropy plus
``reg_weight * (mean score on positives of group a - same for group b) ** 2``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import expit

from .data import Dataset
from .metrics import GroupReport, confusion_by_group

__all__ = [
    "PredictionModel",
    "TrainConfig",
    "Checkpoint",
    "TrainResult",
    "DegenerateGroupError",
    "DivergenceError",
    "OBJECTIVES",
    "logistic",
    "mlp",
    "predict_score",
    "predict",
    "evaluate",
    "deo_regularizer",
    "loss_and_gradient",
    "train",
    "sgd_loop",
    "objective_value",
]

logger = logging.getLogger(__name__)

OBJECTIVES = ("min_group_accuracy", "overall_accuracy")

# |logit| beyond this would round the score to exactly 0 or 1 in float64
_LOGIT_CLIP = 36.0


class DegenerateGroupError(ValueError):
    """A group has no positives where the DEO penalty needs them."""


class DivergenceError(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at step {step}")
        self.step = step
        self.loss = loss


@dataclass(eq=False)
class PredictionModel:
    kind: str
    d: int
    h: int = 0
    params: np.ndarray = None

    def __post_init__(self):
        if self.kind not in ("logistic", "mlp"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == "mlp" and self.h < 1:
            raise ValueError("mlp needs at least one hidden unit")
        if self.params is None:
            self.params = np.zeros(self.n_params)
        self.params = np.array(self.params, dtype=float)
        if self.params.shape != (self.n_params,):
            raise ValueError(
                f"{self.kind} with d={self.d}, h={self.h} needs {self.n_params} "
                f"parameters, got {self.params.shape}")

    @property
    def n_params(self) -> int:
        if self.kind == "logistic":
            return self.d + 1
        return self.d * self.h + 2 * self.h + 1

    def copy(self, params=None) -> "PredictionModel":
        return PredictionModel(self.kind, self.d, self.h,
                               self.params.copy() if params is None else params)

    def unpack(self, params=None):
        p = self.params if params is None else params
        if self.kind == "logistic":
            return p[:-1], p[-1]
        d, h = self.d, self.h
        W1 = p[:d * h].reshape(d, h)
        b1 = p[d * h:d * h + h]
        w2 = p[d * h + h:d * h + 2 * h]
        return W1, b1, w2, p[-1]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "d": self.d, "h": self.h,
                "parameters": [float(v) for v in self.params]}

    @classmethod
    def from_dict(cls, doc: dict) -> "PredictionModel":
        return cls(doc["kind"], int(doc["d"]), int(doc.get("h", 0)),
                   np.asarray(doc["parameters"], dtype=float))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "PredictionModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def logistic(d: int) -> PredictionModel:
    """Logistic regression, zero-initialised."""
    return PredictionModel("logistic", d)


def mlp(d: int, h: int, seed=0) -> PredictionModel:
    """One-hidden-layer tanh network, weights uniform in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``."""
    rng = np.random.default_rng(seed)
    a1, a2 = 1.0 / np.sqrt(d), 1.0 / np.sqrt(h)
    params = np.concatenate([
        rng.uniform(-a1, a1, d * h),
        rng.uniform(-a1, a1, h),
        rng.uniform(-a2, a2, h),
        rng.uniform(-a2, a2, 1),
    ])
    return PredictionModel("mlp", d, h, params)


def _as_matrix(model: PredictionModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.d:
        raise ValueError(f"model expects {model.d} features, got {X.shape[1]}")
    return X


def _forward(model: PredictionModel, X: np.ndarray, params=None):
    """Return (logits, hidden activations or None)."""
    if model.kind == "logistic":
        w, b = model.unpack(params)
        return X @ w + b, None
    W1, b1, w2, b2 = model.unpack(params)
    H = np.tanh(X @ W1 + b1)
    return H @ w2 + b2, H


def _backward(model: PredictionModel, X: np.ndarray, H, dz: np.ndarray, params=None):
    """Parameter gradient given d(objective)/d(logit) per row."""
    if model.kind == "logistic":
        return np.concatenate([X.T @ dz, [dz.sum()]])
    _, _, w2, _ = model.unpack(params)
    dA = np.outer(dz, w2) * (1.0 - H * H)
    return np.concatenate([(X.T @ dA).ravel(), dA.sum(axis=0), H.T @ dz, [dz.sum()]])


def predict_score(model: PredictionModel, X) -> np.ndarray:
    """Scores in the open interval (0, 1); a single vector gives a length-1 array."""
    X = _as_matrix(model, X)
    z, _ = _forward(model, X)
    return expit(np.clip(z, -_LOGIT_CLIP, _LOGIT_CLIP))


def predict(model: PredictionModel, X) -> np.ndarray:
    """Hard predictions: 1 iff score >= 0.5."""
    X = _as_matrix(model, X)
    z, _ = _forward(model, X)
    return (z >= 0).astype(np.int64)


def evaluate(model: PredictionModel, ds: Dataset) -> GroupReport:
    return confusion_by_group(predict(model, ds.features), ds)


def _positive_masks(ds: Dataset, group_pair) -> tuple[np.ndarray, np.ndarray]:
    a, b = group_pair
    pos = ds.labels == 1
    ma, mb = pos & (ds.groups == a), pos & (ds.groups == b)
    for g, m in ((a, ma), (b, mb)):
        if not m.any():
            name = ds.group_names[g] if g < ds.n_groups else str(g)
            raise DegenerateGroupError(f"group {name!r} has no positives")
    return ma, mb


def deo_regularizer(model: PredictionModel, ds: Dataset, group_pair=(0, 1)) -> float:
    """Squared gap between the mean scores of the two groups' positives."""
    ma, mb = _positive_masks(ds, group_pair)
    s = predict_score(model, ds.features)
    return float((s[ma].mean() - s[mb].mean()) ** 2)


def has_regularizer_support(ds: Dataset, group_pair=(0, 1)) -> bool:
    pos = ds.labels == 1
    return all((pos & (ds.groups == g)).any() for g in group_pair)


def loss_and_gradient(model: PredictionModel, batch: Dataset, reg_weight: float = 0.0,
                      group_pair=(0, 1), reg_context: Dataset | None = None,
                      params=None) -> tuple[float, np.ndarray]:
    """Mean BCE on ``batch`` plus ``reg_weight`` times the DEO penalty.

    The penalty is computed on ``reg_context`` when given, otherwise on the
    batch itself.  Raises :class:`DegenerateGroupError` when ``reg_weight > 0``
    and either group has no positives there.
    """
    X = _as_matrix(model, batch.features)
    y = batch.labels.astype(float)
    z, H = _forward(model, X, params)
    # BCE from logits: softplus(z) - y*z, gradient sigmoid(z) - y
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    dz = (expit(z) - y) / len(y)
    grad = _backward(model, X, H, dz, params)
    if reg_weight:
        ctx = batch if reg_context is None else reg_context
        ma, mb = _positive_masks(ctx, group_pair)
        if reg_context is None:
            zc, Hc, Xc = z, H, X
        else:
            Xc = _as_matrix(model, ctx.features)
            zc, Hc = _forward(model, Xc, params)
        s = expit(zc)
        gap = s[ma].mean() - s[mb].mean()
        loss += reg_weight * float(gap * gap)
        ds_dz = s * (1.0 - s)
        dzc = np.zeros_like(zc)
        dzc[ma] += 2.0 * gap / ma.sum()
        dzc[mb] -= 2.0 * gap / mb.sum()
        grad = grad + _backward(model, Xc, Hc, reg_weight * dzc * ds_dz, params)
    return loss, grad


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 32
    learning_rate: float = 0.1
    momentum: float = 0.0
    eval_every: int = 50
    seed: int = 0
    reg_weight: float = 0.0
    group_pair: tuple[int, int] = (0, 1)
    objective: str = "min_group_accuracy"
    loss: str = "bce"

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        for name in ("batch_size", "eval_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.reg_weight < 0:
            raise ValueError("reg_weight must be non-negative")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.loss != "bce":
            raise ValueError("only binary cross-entropy is supported")
        object.__setattr__(self, "group_pair", tuple(int(g) for g in self.group_pair))

    def replace(self, **changes) -> "TrainConfig":
        return replace(self, **changes)


@dataclass(eq=False)
class Checkpoint:
    params: np.ndarray
    step: int
    report: GroupReport
    objective: float
    train_loss: float = float("nan")


@dataclass(eq=False)
class TrainResult:
    model: PredictionModel
    checkpoints: list[Checkpoint]
    best: Checkpoint
    reg_skips: int = 0
    extra: dict = field(default_factory=dict)

    def __iter__(self):
        # unpacks as (model, checkpoints, best)
        return iter((self.model, self.checkpoints, self.best))

    def best_model(self) -> PredictionModel:
        return self.model.copy(self.best.params.copy())


def objective_value(report: GroupReport, objective: str) -> float:
    if objective == "min_group_accuracy":
        return report.min_group_accuracy
    if objective == "overall_accuracy":
        return report.overall_accuracy
    raise ValueError(f"unknown objective {objective!r}")


def rng_streams(seed) -> tuple[np.random.Generator, ...]:
    """Independent (batch, mixing, augmentation) generators derived from one seed."""
    return tuple(np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))


def sgd_loop(model: PredictionModel, cfg: TrainConfig, eval_ds: Dataset,
             next_batch: Callable[[int], Dataset],
             on_eval: Callable[[int, PredictionModel, GroupReport], None] | None = None,
             reg_context: Dataset | None = None) -> TrainResult:
    """Generic SGD/momentum loop with periodic evaluation and checkpointing.

    ``next_batch(step)`` supplies each batch; ``on_eval`` is called after every
    evaluation (including the one at step 0) and may mutate external state.
    """
    model = model.copy()
    velocity = np.zeros_like(model.params)
    checkpoints: list[Checkpoint] = []
    skips = 0
    running, count = 0.0, 0

    def checkpoint(step):
        nonlocal running, count
        rep = evaluate(model, eval_ds)
        ck = Checkpoint(model.params.copy(), step, rep, objective_value(rep, cfg.objective),
                        running / count if count else float("nan"))
        checkpoints.append(ck)
        running, count = 0.0, 0
        if on_eval is not None:
            on_eval(step, model, rep)

    checkpoint(0)
    for step in range(1, cfg.steps + 1):
        batch = next_batch(step)
        lam = cfg.reg_weight
        if lam and reg_context is None and not has_regularizer_support(batch, cfg.group_pair):
            lam = 0.0
            skips += 1
        with np.errstate(invalid="ignore", over="ignore"):
            loss, grad = loss_and_gradient(model, batch, lam, cfg.group_pair, reg_context)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise DivergenceError(step, loss)
        velocity = cfg.momentum * velocity - cfg.learning_rate * grad
        model.params = model.params + velocity
        running += loss
        count += 1
        if step % cfg.eval_every == 0 or step == cfg.steps:
            checkpoint(step)
    if skips:
        logger.info("DEO penalty skipped on %d of %d batches", skips, cfg.steps)
    # earliest checkpoint wins ties
    best = max(checkpoints, key=lambda c: (c.objective, -c.step))
    return TrainResult(model, checkpoints, best, skips)


def train(model: PredictionModel, train_ds: Dataset, eval_ds: Dataset, cfg: TrainConfig,
          objective: str | None = None, reg_context: Dataset | None = None) -> TrainResult:
    """Plain SGD on uniformly sampled batches (with replacement) of ``train_ds``.

    Returns a :class:`TrainResult` that also unpacks as
    ``(trained_model, checkpoints, best_checkpoint)``.
    """
    if objective is not None:
        cfg = cfg.replace(objective=objective)
    batch_rng, _, _ = rng_streams(cfg.seed)

    def next_batch(step):
        return train_ds.subset(batch_rng.integers(0, train_ds.n, cfg.batch_size))

    return sgd_loop(model, cfg, eval_ds, next_batch, reg_context=reg_context)
