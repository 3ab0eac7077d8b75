"""Datasets, CSV interchange, stratified splits and a synthetic two-group generator.

The synthetic generator draws a clean label from Bernoulli(0.5), a feature vector
from the Gaussian cluster of its (group, clean label) cell, and then flips the
observed label with a per-group probability.  Because of that construction the
exact posterior ``P(Y=1 | x, group)`` is available in closed form, which the
decomposition estimator needs for the optimal prediction and the noise term.
"""
from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "Dataset",
    "SplitSpec",
    "SyntheticSpec",
    "TrueConditional",
    "DataError",
    "SchemaError",
    "ParseError",
    "EmptyDatasetError",
    "StratificationError",
    "load_csv",
    "save_csv",
    "save_metadata",
    "load_metadata",
    "generate_synthetic",
    "stratified_split",
    "bootstrap_resample",
    "subsample_resample",
    "resample",
    "concat",
]


class DataError(ValueError):
    """Base class for dataset construction and parsing problems."""


class SchemaError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class EmptyDatasetError(DataError):
    pass


class StratificationError(DataError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable table of features, binary labels and dense group ids.

    Parameters
    ----------
    features : array of shape (n, d)
    labels : array of shape (n,) with values in {0, 1}
    groups : array of shape (n,) with values in {0, ..., G-1}
    group_names : display names, one per group id
    """

    features: np.ndarray
    labels: np.ndarray
    groups: np.ndarray
    group_names: tuple[str, ...] = ()

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.labels)
        g = np.asarray(self.groups)
        if X.ndim != 2 or X.shape[0] == 0:
            raise EmptyDatasetError("dataset must contain at least one row")
        n, d = X.shape
        if d < 1:
            raise DataError("dataset must have at least one feature column")
        if y.shape != (n,) or g.shape != (n,):
            raise DataError(
                f"length mismatch: features {n}, labels {y.shape}, groups {g.shape}")
        if not np.all((y == 0) | (y == 1)):
            raise DataError("labels must be 0 or 1")
        if g.size and (g.min() < 0 or not np.all(g == np.round(g))):
            raise DataError("group ids must be non-negative integers")
        g = g.astype(np.int64)
        names = tuple(str(s) for s in self.group_names)
        n_groups = int(g.max()) + 1
        if not names:
            names = tuple(str(i) for i in range(n_groups))
        if len(names) < n_groups:
            raise DataError(
                f"group id {n_groups - 1} has no name ({len(names)} names given)")
        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "labels", _frozen(y.astype(np.int64)))
        object.__setattr__(self, "groups", _frozen(g))
        object.__setattr__(self, "group_names", names)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def n_groups(self) -> int:
        return len(self.group_names)

    def __len__(self) -> int:
        return self.n

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.features[idx], self.labels[idx], self.groups[idx],
                       self.group_names)

    def group_sizes(self) -> np.ndarray:
        return np.bincount(self.groups, minlength=self.n_groups)

    def cell_indices(self, group: int, label: int) -> np.ndarray:
        return np.flatnonzero((self.groups == group) & (self.labels == label))

    def row_key(self) -> list[tuple]:
        """Hashable per-row tuples, used for multiset comparisons."""
        return [tuple(x) + (int(y), int(g))
                for x, y, g in zip(self.features.tolist(), self.labels, self.groups)]


def concat(parts: Sequence[Dataset]) -> Dataset:
    if not parts:
        raise EmptyDatasetError("nothing to concatenate")
    names = max((p.group_names for p in parts), key=len)
    return Dataset(np.vstack([p.features for p in parts]),
                   np.concatenate([p.labels for p in parts]),
                   np.concatenate([p.groups for p in parts]), names)


# ---------------------------------------------------------------------------
# CSV interchange

_FEATURE_RE = re.compile(r"^feature_(\d+)$")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_csv(ds: Dataset, path, header_comment: str | None = None) -> None:
    """Write ``feature_0..feature_{d-1}, label, group`` with 17 significant digits.

    Group names are written verbatim so ids survive a reload in first-appearance
    order.  An optional ``# ...`` comment line is placed before the header.
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"feature_{j}" for j in range(ds.d)] + ["label", "group"])
        for x, y, g in zip(ds.features, ds.labels, ds.groups):
            w.writerow([_fmt(v) for v in x] + [int(y), ds.group_names[g]])


def _parse_label(raw: str, row: int) -> int:
    try:
        v = float(raw)
    except ValueError:
        raise ParseError(f"row {row}: label {raw!r} is not numeric", row) from None
    if v not in (0.0, 1.0):
        raise ParseError(f"row {row}: label {raw!r} is not binary (0/1)", row)
    return int(v)


def load_csv(path, schema: Mapping | None = None,
             group_names: Sequence[str] | None = None) -> Dataset:
    """Read a dataset written by :func:`save_csv` (or any CSV matching ``schema``).

    ``schema`` may override column names with keys ``features`` (list of
    column names), ``label`` and ``group``.  Lines starting with ``#`` are
    ignored.  Groups are mapped to dense ids in order of first appearance,
    unless ``group_names`` fixes the order explicitly.

    Row numbers in error messages count data rows from 1.
    """
    schema = dict(schema or {})
    label_col = schema.get("label", "label")
    group_col = schema.get("group", "group")
    with Path(path).open(newline="") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise EmptyDatasetError(f"{path}: empty file")
    reader = csv.reader(lines)
    header = next(reader)
    if "features" in schema:
        feat_cols = list(schema["features"])
    else:
        matched = sorted((int(m.group(1)), h) for h in header
                         if (m := _FEATURE_RE.match(h)))
        feat_cols = [h for _, h in matched]
        if [i for i, _ in matched] != list(range(len(matched))):
            raise SchemaError(f"{path}: feature columns are not contiguous feature_0..")
    missing = [c for c in feat_cols + [label_col, group_col] if c not in header]
    if missing or not feat_cols:
        raise SchemaError(f"{path}: missing column(s) {missing or ['feature_0']}")
    fi = [header.index(c) for c in feat_cols]
    li, gi = header.index(label_col), header.index(group_col)

    name_to_id: dict[str, int] = {}
    if group_names is not None:
        name_to_id = {str(s): i for i, s in enumerate(group_names)}
    X, y, g = [], [], []
    for row_no, row in enumerate(reader, start=1):
        if len(row) != len(header):
            raise ParseError(f"row {row_no}: expected {len(header)} fields, got {len(row)}",
                             row_no)
        try:
            X.append([float(row[i]) for i in fi])
        except ValueError:
            raise ParseError(f"row {row_no}: non-numeric feature", row_no) from None
        y.append(_parse_label(row[li], row_no))
        name = row[gi]
        if name not in name_to_id:
            if group_names is not None:
                raise ParseError(f"row {row_no}: unknown group {name!r}", row_no)
            name_to_id[name] = len(name_to_id)
        g.append(name_to_id[name])
    if not X:
        raise EmptyDatasetError(f"{path}: no data rows")
    names = sorted(name_to_id, key=name_to_id.get)
    return Dataset(np.array(X), np.array(y), np.array(g), tuple(names))


def save_metadata(path, group_names: Sequence[str], seed=None, spec=None, **extra) -> None:
    doc = {"group_names": list(group_names), "seed": seed, "spec": spec}
    doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_metadata(path) -> dict:
    return json.loads(Path(path).read_text())


# ---------------------------------------------------------------------------
# Splits and resampling

@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.5
    eval_fraction: float = 0.25
    test_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self):
        fr = self.fractions
        for name, f in zip(("train_fraction", "eval_fraction", "test_fraction"), fr):
            if not 0.0 < f < 1.0:
                raise DataError(f"{name} must lie in (0, 1), got {f}")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise DataError(f"train_fraction + eval_fraction + test_fraction = {sum(fr)}, not 1")

    @property
    def fractions(self) -> tuple[float, float, float]:
        return (self.train_fraction, self.eval_fraction, self.test_fraction)


def _allocate(m: int, fractions: Sequence[float]) -> np.ndarray:
    # largest-remainder rounding: every share is within one element of m*f
    exact = np.asarray(fractions) * m
    sizes = np.floor(exact).astype(int)
    rest = m - sizes.sum()
    order = np.argsort(-(exact - sizes), kind="stable")
    sizes[order[:rest]] += 1
    return sizes


def stratified_split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Split into (train, eval, test), stratified by (group, label) cell."""
    rng = np.random.default_rng(spec.seed)
    parts: list[list[np.ndarray]] = [[], [], []]
    for g in range(ds.n_groups):
        for y in (0, 1):
            idx = ds.cell_indices(g, y)
            if idx.size == 0:
                continue
            if idx.size < 3:
                raise StratificationError(
                    f"cell (group={ds.group_names[g]!r}, label={y}) has {idx.size} "
                    "rows; at least 3 are needed")
            idx = rng.permutation(idx)
            sizes = _allocate(idx.size, spec.fractions)
            for k in np.flatnonzero(sizes == 0):
                donor = int(np.argmax(sizes))
                sizes[donor] -= 1
                sizes[k] += 1
            bounds = np.cumsum(sizes)[:-1]
            for k, chunk in enumerate(np.split(idx, bounds)):
                parts[k].append(chunk)
    return tuple(ds.subset(np.sort(np.concatenate(p))) for p in parts)


def bootstrap_resample(ds: Dataset, seed) -> Dataset:
    """n rows drawn uniformly with replacement."""
    rng = np.random.default_rng(seed)
    return ds.subset(rng.integers(0, ds.n, size=ds.n))


def subsample_resample(ds: Dataset, seed, size: int | float = 0.5) -> Dataset:
    """Rows drawn without replacement; ``size`` is a count or a fraction of n."""
    rng = np.random.default_rng(seed)
    k = int(round(size * ds.n)) if isinstance(size, float) else int(size)
    if not 1 <= k <= ds.n:
        raise DataError(f"subsample size {k} outside [1, {ds.n}]")
    return ds.subset(np.sort(rng.choice(ds.n, size=k, replace=False)))


def resample(ds: Dataset, mode: str, seed, size=0.5) -> Dataset:
    if mode == "bootstrap":
        return bootstrap_resample(ds, seed)
    if mode == "subsample":
        return subsample_resample(ds, seed, size)
    raise DataError(f"unknown resampling mode {mode!r}")


# ---------------------------------------------------------------------------
# Synthetic generator

@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian clusters per (group, clean label) with per-group label flips.

    ``cluster_means`` has shape (G, 2, d); ``cluster_stddev`` has shape (G, 2).
    """

    n_per_group: tuple[int, ...]
    cluster_means: tuple
    cluster_stddev: tuple
    label_noise_rate: tuple[float, ...]
    seed: int = 0
    dims: int | None = None
    group_names: tuple[str, ...] = ()

    def __post_init__(self):
        n = tuple(int(v) for v in self.n_per_group)
        G = len(n)
        if G < 2:
            raise DataError("synthetic data needs at least 2 groups")
        if any(v <= 0 for v in n):
            raise DataError(f"n_per_group must be positive, got {n}")
        means = np.asarray(self.cluster_means, dtype=float)
        if means.ndim != 3 or means.shape[:2] != (G, 2):
            raise DataError(f"cluster_means must have shape ({G}, 2, d), got {means.shape}")
        if not np.all(np.isfinite(means)):
            raise DataError("cluster_means must be finite")
        dims = means.shape[2] if self.dims is None else int(self.dims)
        if dims != means.shape[2] or dims < 1:
            raise DataError(f"dims={self.dims} does not match cluster_means")
        std = np.asarray(self.cluster_stddev, dtype=float)
        if std.shape != (G, 2) or not np.all(std > 0):
            raise DataError(f"cluster_stddev must be positive with shape ({G}, 2)")
        rho = np.asarray(self.label_noise_rate, dtype=float)
        if rho.shape != (G,) or np.any(rho < 0) or np.any(rho >= 0.5):
            raise DataError("label_noise_rate must have one value per group in [0, 0.5)")
        names = tuple(self.group_names) or tuple(f"g{i}" for i in range(G))
        if len(names) != G:
            raise DataError("group_names must have one entry per group")
        object.__setattr__(self, "n_per_group", n)
        object.__setattr__(self, "cluster_means", _nested_tuple(means))
        object.__setattr__(self, "cluster_stddev", tuple(map(tuple, std.tolist())))
        object.__setattr__(self, "label_noise_rate", tuple(rho.tolist()))
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "group_names", names)

    @property
    def means(self) -> np.ndarray:
        return np.asarray(self.cluster_means, dtype=float)

    @property
    def stddev(self) -> np.ndarray:
        return np.asarray(self.cluster_stddev, dtype=float)

    @property
    def noise(self) -> np.ndarray:
        return np.asarray(self.label_noise_rate, dtype=float)

    def replace(self, **changes) -> "SyntheticSpec":
        doc = self.to_dict()
        doc.update(changes)
        return SyntheticSpec(**doc)

    def to_dict(self) -> dict:
        doc = asdict(self)
        for k, v in doc.items():
            if isinstance(v, tuple):
                doc[k] = json.loads(json.dumps(v))
        return doc


def _nested_tuple(a: np.ndarray):
    return tuple(_nested_tuple(r) for r in a) if a.ndim > 1 else tuple(a.tolist())


@dataclass(frozen=True)
class TrueConditional:
    """Exact ``P(Y=1 | x)`` for data drawn from a :class:`SyntheticSpec`.

    Called with ``groups`` it returns the group-conditional posterior; without,
    it marginalises the group using the generating group proportions.
    """

    spec: SyntheticSpec

    def _log_density(self, X: np.ndarray) -> np.ndarray:
        # log N(x; mean[g, y], std[g, y]^2 I) for every (row, g, y)
        mu, sd = self.spec.means, self.spec.stddev
        d = X.shape[1]
        diff = X[:, None, None, :] - mu[None]
        sq = np.einsum("ngyd,ngyd->ngy", diff, diff)
        return -0.5 * sq / sd ** 2 - d * np.log(sd) - 0.5 * d * np.log(2 * np.pi)

    def clean_posterior(self, X, groups) -> np.ndarray:
        """``P(clean label = 1 | x, group)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        ld = self._log_density(X)
        g = np.broadcast_to(np.asarray(groups, dtype=int), (X.shape[0],))
        rows = np.arange(X.shape[0])
        return expit(ld[rows, g, 1] - ld[rows, g, 0])

    def __call__(self, X, groups=None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        rho = self.spec.noise
        if groups is not None:
            g = np.broadcast_to(np.asarray(groups, dtype=int), (X.shape[0],))
            p = self.clean_posterior(X, g)
            return rho[g] + (1.0 - 2.0 * rho[g]) * p
        # marginal over groups: weights pi_g * 0.5 * density(g, y)
        prior = np.asarray(self.spec.n_per_group, dtype=float)
        prior /= prior.sum()
        ld = self._log_density(X) + np.log(prior)[None, :, None]
        top = ld.max(axis=(1, 2), keepdims=True)
        w = np.exp(ld - top)
        p_obs1 = w[:, :, 1] * (1 - rho) + w[:, :, 0] * rho
        return p_obs1.sum(axis=1) / w.sum(axis=(1, 2))


def generate_synthetic(spec: SyntheticSpec) -> tuple[Dataset, TrueConditional]:
    """Draw a dataset group by group; rows are ordered by group id."""
    rng = np.random.default_rng(spec.seed)
    mu, sd, rho = spec.means, spec.stddev, spec.noise
    X, y, g = [], [], []
    for k, n in enumerate(spec.n_per_group):
        clean = (rng.random(n) < 0.5).astype(int)
        Xk = mu[k, clean] + sd[k, clean][:, None] * rng.standard_normal((n, spec.dims))
        flip = rng.random(n) < rho[k]
        X.append(Xk)
        y.append(np.where(flip, 1 - clean, clean))
        g.append(np.full(n, k))
    ds = Dataset(np.vstack(X), np.concatenate(y), np.concatenate(g), spec.group_names)
    return ds, TrueConditional(spec)
