"""Shipped two-group synthetic benchmarks and the trainers used with them.

Every benchmark draws its training, evaluation and test sets independently
from the same cluster layout, with seeds ``s``, ``s + 1_000_000`` and
``s + 2_000_000``.  Evaluation and test sets are balanced and large so that
the minority group's accuracy is measured with low noise.

``leveling_down``
    Two equally sized groups whose optimal linear boundaries disagree.  A
    single logistic model serves one group well and the other badly, so the
    DEO penalty can only close the gap by hurting the better-served group.
``imbalanced``
    1000 vs 50 training rows; the minority group's classes differ along a
    direction the majority does not use.
``interpolation``
    Well separated clusters, 80 vs 16 training rows, meant for an MLP wide
    enough to fit every training row.
``xor``
    Group-dependent labelling that no single hyperplane fits, with 15% label
    noise.
``symmetric``
    Two groups of equal size that are mirror images across the first axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .data import Dataset, SyntheticSpec, TrueConditional, generate_synthetic
from .models import PredictionModel, TrainConfig, logistic, mlp, train

__all__ = ["Benchmark", "BENCHMARKS", "get_benchmark", "make_trainer", "CAPACITIES",
           "EVAL_SEED_OFFSET", "TEST_SEED_OFFSET"]

EVAL_SEED_OFFSET = 1_000_000
TEST_SEED_OFFSET = 2_000_000


@dataclass(frozen=True)
class Benchmark:
    name: str
    spec: SyntheticSpec
    eval_n_per_group: tuple[int, ...]
    test_n_per_group: tuple[int, ...]
    model: dict = field(default_factory=lambda: {"kind": "logistic"})
    train: TrainConfig = TrainConfig()
    decompose: dict = field(default_factory=dict)

    def datasets(self, seed: int = 0) -> tuple[Dataset, Dataset, Dataset, TrueConditional]:
        """``(train, eval, test, true_conditional)`` for one seed."""
        base = self.spec.replace(seed=self.spec.seed + seed)
        tr, cond = generate_synthetic(base)
        ev, _ = generate_synthetic(base.replace(n_per_group=list(self.eval_n_per_group),
                                                seed=base.seed + EVAL_SEED_OFFSET))
        te, _ = generate_synthetic(base.replace(n_per_group=list(self.test_n_per_group),
                                                seed=base.seed + TEST_SEED_OFFSET))
        return tr, ev, te, cond

    def make_model(self, d: int, seed: int = 0) -> PredictionModel:
        return build_model(self.model, d, seed)

    def train_config(self, seed: int = 0, **changes) -> TrainConfig:
        return self.train.replace(seed=seed, **changes)


def build_model(model_cfg: dict, d: int, seed: int = 0) -> PredictionModel:
    kind = model_cfg.get("kind", "logistic")
    if kind == "logistic":
        return logistic(d)
    if kind == "mlp":
        return mlp(d, int(model_cfg.get("hidden", 16)), seed=seed)
    raise ValueError(f"unknown model kind {kind!r}")


def _spec(n, means, std, noise=0.0) -> SyntheticSpec:
    G = len(n)
    return SyntheticSpec(n, means, [[std, std]] * G, [noise] * G)


BENCHMARKS: dict[str, Benchmark] = {
    "leveling_down": Benchmark(
        "leveling_down",
        _spec([400, 400], [[[-1.5, -2], [1.5, -2]], [[-0.5, 2], [0.5, 2]]], 1.0),
        (500, 500), (2000, 2000),
        train=TrainConfig(steps=2000, batch_size=256, learning_rate=0.05, eval_every=50),
    ),
    "imbalanced": Benchmark(
        "imbalanced",
        _spec([1000, 50], [[[-1.5, 0], [1.5, 0]], [[0, 2], [0, 4]]], 1.0),
        (500, 500), (2000, 2000),
        model={"kind": "mlp", "hidden": 16},
        train=TrainConfig(steps=2000, batch_size=64, learning_rate=0.1, eval_every=50),
    ),
    "interpolation": Benchmark(
        "interpolation",
        _spec([80, 16], [[[-2, 0], [2, 0]], [[0, 2], [0, 6]]], 0.45),
        (300, 300), (300, 300),
        model={"kind": "mlp", "hidden": 100},
        decompose={"capacity": "high"},
    ),
    "xor": Benchmark(
        "xor",
        _spec([300, 50], [[[-2, 2], [2, 2]], [[2, -2], [-2, -2]]], 1.0, noise=0.15),
        (300, 300), (300, 300),
        decompose={"capacity": "low"},
    ),
    "symmetric": Benchmark(
        "symmetric",
        _spec([200, 200], [[[-1.5, 1], [1.5, 1]], [[-1.5, -1], [1.5, -1]]], 1.0, noise=0.1),
        (300, 300), (400, 400),
    ),
}


def get_benchmark(name: str) -> Benchmark:
    try:
        return BENCHMARKS[name]
    except KeyError:
        raise ValueError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}") from None


# ---------------------------------------------------------------------------
# Trainers for the decomposition (full batch, no early stopping)

CAPACITIES = ("low", "high")

_TRAINER_DEFAULTS = {
    "low": {"steps": 300, "learning_rate": 0.5, "momentum": 0.9},
    "high": {"steps": 1000, "learning_rate": 0.5, "momentum": 0.9, "extra_hidden": 4},
}


def make_trainer(capacity: str = "high", steps: int | None = None,
                 learning_rate: float | None = None, momentum: float | None = None,
                 extra_hidden: int | None = None):
    """Trainer ``(dataset, seed) -> model`` for :func:`decompose_fairness`.

    ``low`` fits a logistic model; ``high`` fits a tanh MLP with
    ``n + extra_hidden`` hidden units, enough to interpolate ``n`` training
    rows.  Both run full-batch momentum SGD and return the final iterate.
    """
    if capacity not in CAPACITIES:
        raise ValueError(f"capacity must be one of {CAPACITIES}")
    opts = dict(_TRAINER_DEFAULTS[capacity])
    for k, v in (("steps", steps), ("learning_rate", learning_rate),
                 ("momentum", momentum), ("extra_hidden", extra_hidden)):
        if v is not None:
            opts[k] = v
    extra = opts.pop("extra_hidden", 0)

    def trainer(ds: Dataset, seed: int) -> PredictionModel:
        cfg = TrainConfig(batch_size=ds.n, eval_every=max(opts["steps"], 1), seed=seed,
                          objective="overall_accuracy", **opts)
        model = logistic(ds.d) if capacity == "low" else mlp(ds.d, ds.n + extra, seed=seed)
        return train(model, ds, ds, cfg).model

    trainer.capacity = capacity
    trainer.options = dict(opts, extra_hidden=extra)
    return trainer
