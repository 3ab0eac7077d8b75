"""Adaptive sampling with g-SMOTE: grow an augmented pool toward the weakest group.

Each SGD step draws its whole batch either from the original training set
(with probability ``mix_prob``) or from the augmented pool, which starts as a
copy of the training set.  At every evaluation the group with the lowest
held-out accuracy is found and ``augment_batch`` synthetic rows seeded from
that group's training members are appended to the pool.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import AugmentConfig, AugmentationUnavailable, LatentCodec, gsmote_sample
from .data import Dataset
from .models import (PredictionModel, TrainConfig, TrainResult, predict, rng_streams,
                     sgd_loop)

__all__ = [
    "AdaptiveConfig",
    "AugmentedPool",
    "AdaptiveResult",
    "GROUP_MODES",
    "EmptyGroupError",
    "target_ids",
    "weakest_group",
    "adaptive_train",
    "static_gsmote_train",
]

GROUP_MODES = ("protected_only", "protected_x_label")


class EmptyGroupError(ValueError):
    pass


@dataclass(frozen=True)
class AdaptiveConfig:
    """Pool and targeting knobs; SGD settings come from a :class:`TrainConfig`.

    ``augment_batch=None`` means "same as the training batch size".
    """

    mix_prob: float = 0.5
    augment_batch: int | None = None
    group_mode: str = "protected_only"
    objective: str = "min_group_accuracy"

    def __post_init__(self):
        if not 0.0 <= self.mix_prob <= 1.0:
            raise ValueError("mix_prob must lie in [0, 1]")
        if self.augment_batch is not None and self.augment_batch < 0:
            raise ValueError("augment_batch must be non-negative")
        if self.group_mode not in GROUP_MODES:
            raise ValueError(f"group_mode must be one of {GROUP_MODES}")
        if self.objective != "min_group_accuracy":
            raise ValueError("only min_group_accuracy is supported as objective")


def target_ids(ds: Dataset, group_mode: str) -> tuple[np.ndarray, int]:
    """Per-row targeting unit and the number of units.

    ``protected_x_label`` crosses group and label: unit ``2 * group + label``.
    """
    if group_mode == "protected_only":
        return ds.groups, ds.n_groups
    if group_mode == "protected_x_label":
        return 2 * ds.groups + ds.labels, 2 * ds.n_groups
    raise ValueError(f"unknown group_mode {group_mode!r}")


def weakest_group(model: PredictionModel, eval_ds: Dataset,
                  group_mode: str = "protected_only") -> int:
    """Unit with the lowest accuracy on ``eval_ds``; ties go to the lowest id."""
    units, n_units = target_ids(eval_ds, group_mode)
    sizes = np.bincount(units, minlength=n_units)
    if np.any(sizes == 0):
        raise EmptyGroupError(
            f"targeting unit(s) {np.flatnonzero(sizes == 0).tolist()} have no eval rows")
    correct = predict(model, eval_ds.features) == eval_ds.labels
    acc = np.bincount(units, weights=correct, minlength=n_units) / sizes
    return int(np.argmin(acc))


class AugmentedPool:
    """Append-only extended training set; the original rows form its prefix."""

    def __init__(self, origin: Dataset):
        self.origin = origin
        self._X = [origin.features]
        self._y = [origin.labels]
        self._g = [origin.groups]
        self.provenance: list[str] = ["original"] * origin.n
        self.created: list[int] = [0] * origin.n
        self.target: list[int] = [-1] * origin.n
        self._ds: Dataset | None = origin

    def __len__(self) -> int:
        return len(self.provenance)

    @property
    def n_synthetic(self) -> int:
        return len(self) - self.origin.n

    def append(self, x, label: int, group: int, step: int, target: int,
               provenance: str = "synthetic") -> None:
        self._X.append(np.asarray(x, dtype=float)[None, :])
        self._y.append(np.array([label]))
        self._g.append(np.array([group]))
        self.provenance.append(provenance)
        self.created.append(step)
        self.target.append(target)
        self._ds = None

    @property
    def dataset(self) -> Dataset:
        if self._ds is None:
            self._ds = Dataset(np.vstack(self._X), np.concatenate(self._y),
                               np.concatenate(self._g), self.origin.group_names)
        return self._ds

    def synthetic_rows(self) -> list[dict]:
        ds = self.dataset
        return [{"row_id": i, "provenance": self.provenance[i], "group": int(ds.groups[i]),
                 "target": self.target[i], "creation_step": self.created[i]}
                for i in range(self.origin.n, len(self))]

    def write_log(self, path, header_comment: str | None = None) -> None:
        ds = self.dataset
        with Path(path).open("w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row_id", "provenance", "group", "target", "creation_step"])
            for i in range(len(self)):
                w.writerow([i, self.provenance[i], ds.group_names[ds.groups[i]],
                            self.target[i], self.created[i]])


@dataclass(eq=False)
class AdaptiveResult(TrainResult):
    pool: AugmentedPool = None
    fallbacks: int = 0
    targets: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.model, self.checkpoints, self.pool, self.best))


def _augment_round(pool: AugmentedPool, train_ds: Dataset, codec: LatentCodec,
                   aug_cfg: AugmentConfig, unit_of_row: np.ndarray, target: int | None,
                   n_units: int, n_rows: int, step: int, rng: np.random.Generator) -> int:
    """Append ``n_rows`` synthetic rows; returns the number of duplication fallbacks."""
    fallbacks = 0
    members = [np.flatnonzero(unit_of_row == u) for u in range(n_units)]
    for _ in range(n_rows):
        unit = target if target is not None else int(rng.integers(n_units))
        if members[unit].size == 0:
            raise EmptyGroupError(f"targeting unit {unit} has no training rows")
        seed_row = int(rng.choice(members[unit]))
        try:
            x, y = gsmote_sample(train_ds, codec, seed_row, aug_cfg, rng)
            prov = "synthetic"
        except AugmentationUnavailable:
            x, y = train_ds.features[seed_row], int(train_ds.labels[seed_row])
            prov = "duplicate"
            fallbacks += 1
        pool.append(x, y, int(train_ds.groups[seed_row]), step, unit, prov)
    return fallbacks


def _run(model, train_ds, eval_ds, codec, aug_cfg, cfg: AdaptiveConfig, train_cfg: TrainConfig,
         targeted: bool) -> AdaptiveResult:
    batch_rng, mix_rng, aug_rng = rng_streams(train_cfg.seed)
    pool = AugmentedPool(train_ds)
    n_aug = train_cfg.batch_size if cfg.augment_batch is None else cfg.augment_batch
    unit_of_row, n_units = target_ids(train_ds, cfg.group_mode)
    state = {"fallbacks": 0, "targets": []}

    def next_batch(step):
        src = train_ds if mix_rng.random() < cfg.mix_prob else pool.dataset
        return src.subset(batch_rng.integers(0, src.n, train_cfg.batch_size))

    def on_eval(step, current, report):
        if step == 0 or step >= train_cfg.steps or n_aug == 0:
            return
        target = weakest_group(current, eval_ds, cfg.group_mode) if targeted else None
        state["targets"].append((step, target))
        state["fallbacks"] += _augment_round(pool, train_ds, codec, aug_cfg, unit_of_row,
                                             target, n_units, n_aug, step, aug_rng)

    res = sgd_loop(model, train_cfg.replace(objective=cfg.objective), eval_ds,
                   next_batch, on_eval)
    return AdaptiveResult(res.model, res.checkpoints, res.best, res.reg_skips,
                          pool=pool, fallbacks=state["fallbacks"], targets=state["targets"])


def adaptive_train(model: PredictionModel, train_ds: Dataset, eval_ds: Dataset,
                   codec: LatentCodec, aug_cfg: AugmentConfig, cfg: AdaptiveConfig,
                   train_cfg: TrainConfig) -> AdaptiveResult:
    """Train with batches mixed from the training set and a pool grown at the weakest unit.

    The result unpacks as ``(model, checkpoints, pool, best_checkpoint)``.
    """
    return _run(model, train_ds, eval_ds, codec, aug_cfg, cfg, train_cfg, targeted=True)


def static_gsmote_train(model: PredictionModel, train_ds: Dataset, eval_ds: Dataset,
                        codec: LatentCodec, aug_cfg: AugmentConfig, cfg: AdaptiveConfig,
                        train_cfg: TrainConfig) -> AdaptiveResult:
    """Same loop, but each synthetic row targets a uniformly random unit."""
    return _run(model, train_ds, eval_ds, codec, aug_cfg, cfg, train_cfg, targeted=False)
