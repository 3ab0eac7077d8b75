"""Uniform simplex sampling, SMOTE and g-SMOTE in a pluggable latent space.

g-SMOTE encodes the training rows, takes the ``m`` nearest same-label
neighbours of a seed row in latent space, picks ``k`` of them at random and
samples uniformly from the simplex they span together with the seed.  With
``k = 1`` that is ordinary SMOTE: a uniform point on the segment between the
seed and one neighbour.

Whether a simplex stays inside a label-consistent region of latent space is a
property of the codec, not something this module can check.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .data import Dataset

__all__ = [
    "AugmentConfig",
    "AugmentationUnavailable",
    "LatentCodec",
    "IdentityCodec",
    "FileBackedCodec",
    "sample_simplex",
    "sample_simplex_batch",
    "nearest_neighbors",
    "gsmote_sample",
    "smote_classic",
    "sweep_mk",
]


class AugmentationUnavailable(ValueError):
    """The seed's cohort is too small for the requested neighbour pool."""


@dataclass(frozen=True)
class AugmentConfig:
    """g-SMOTE knobs.

    ``include_seed`` puts the seed itself among the simplex vertices, so ``k``
    neighbours give a ``k``-simplex.  ``same_group`` restricts the neighbour
    cohort to the seed's own group as well as its label.
    """

    m: int = 10
    k: int = 3
    include_seed: bool = True
    same_group: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.m < 1 or self.k < 1:
            raise ValueError("m and k must be positive")
        if self.k > self.m:
            raise ValueError(f"k={self.k} exceeds m={self.m}")


# ---------------------------------------------------------------------------
# Codecs

class LatentCodec:
    """Encoder/decoder pair standing in for an invertible generative model."""

    kind = "abstract"

    def __init__(self):
        self._cache: dict[int, tuple[Dataset, np.ndarray]] = {}

    def encode(self, X) -> np.ndarray:
        raise NotImplementedError

    def decode(self, Z) -> np.ndarray:
        raise NotImplementedError

    def encode_dataset(self, ds: Dataset) -> np.ndarray:
        """Latents for every row of ``ds``, computed once per dataset object."""
        hit = self._cache.get(id(ds))
        if hit is not None and hit[0] is ds:
            return hit[1]
        Z = np.atleast_2d(self.encode(ds.features))
        Z.setflags(write=False)
        self._cache[id(ds)] = (ds, Z)
        return Z


class IdentityCodec(LatentCodec):
    kind = "identity"

    def encode(self, X):
        return np.array(X, dtype=float)

    def decode(self, Z):
        return np.array(Z, dtype=float)


class FileBackedCodec(LatentCodec):
    """Latents precomputed offline, one per training row.

    ``encode`` looks a feature vector up among the stored rows.  ``decode``
    returns the generator-table feature for an exactly matching latent if one
    exists, otherwise the stored feature of the nearest stored latent.
    """

    kind = "file_backed"

    def __init__(self, latents, features, generator_table=None):
        super().__init__()
        self.latents = np.atleast_2d(np.asarray(latents, dtype=float))
        self.features = np.atleast_2d(np.asarray(features, dtype=float))
        if self.latents.shape[0] != self.features.shape[0]:
            raise ValueError("need exactly one latent per stored feature row")
        self._by_feature = {x.tobytes(): i for i, x in enumerate(self.features)}
        self._generator = {}
        if generator_table is not None:
            gz, gx = generator_table
            for z, x in zip(np.atleast_2d(gz), np.atleast_2d(gx)):
                self._generator[np.asarray(z, dtype=float).tobytes()] = np.asarray(x, dtype=float)

    @classmethod
    def from_csv(cls, path, ds: Dataset) -> "FileBackedCodec":
        """Read ``row_id, z_0..z_{n_z-1}``; row ids index the rows of ``ds``."""
        with Path(path).open(newline="") as fh:
            rows = [r for r in csv.reader(ln for ln in fh if not ln.startswith("#"))]
        header, body = rows[0], rows[1:]
        if header[0] != "row_id" or not all(h == f"z_{j}" for j, h in enumerate(header[1:])):
            raise ValueError(f"{path}: expected columns row_id, z_0, z_1, ...")
        Z = np.full((ds.n, len(header) - 1), np.nan)
        for r in body:
            Z[int(r[0])] = [float(v) for v in r[1:]]
        if np.isnan(Z).any():
            raise ValueError(f"{path}: some dataset rows have no latent")
        return cls(Z, ds.features)

    def encode(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        try:
            idx = [self._by_feature[x.tobytes()] for x in X]
        except KeyError:
            raise KeyError("feature vector is not among the stored rows") from None
        return self.latents[idx]

    def decode(self, Z):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        out = np.empty((Z.shape[0], self.features.shape[1]))
        for i, z in enumerate(Z):
            hit = self._generator.get(z.tobytes())
            if hit is not None:
                out[i] = hit
            else:
                out[i] = self.features[np.argmin(((self.latents - z) ** 2).sum(axis=1))]
        return out


# ---------------------------------------------------------------------------
# Sampling

def _check_vertices(vertices) -> np.ndarray:
    try:
        V = np.asarray(vertices, dtype=float)
    except ValueError:
        raise ValueError("vertices have inconsistent dimensions") from None
    if V.size == 0 or V.ndim != 2:
        raise ValueError("need a non-empty list of equal-length vertex vectors")
    return V


def sample_simplex(vertices, seed=None) -> np.ndarray:
    """One uniform draw from the convex hull of ``vertices``.

    Builds the point vertex by vertex: start at the first vertex, and when
    adding vertex ``i+1`` to a point already uniform on the first ``i``, keep
    it with weight ``u ** (1/i)`` for ``u ~ U[0, 1]``.  For affinely dependent
    vertices the draw still lies in the hull but is no longer uniform.
    """
    V = _check_vertices(vertices)
    rng = np.random.default_rng(seed)
    rho = V[0].copy()
    for i in range(1, V.shape[0]):
        t = rng.random() ** (1.0 / i)
        rho = t * rho + (1.0 - t) * V[i]
    return rho


def sample_simplex_batch(vertices, size: int, seed=None) -> np.ndarray:
    """``size`` independent draws of :func:`sample_simplex`, vectorised."""
    V = _check_vertices(vertices)
    rng = np.random.default_rng(seed)
    rho = np.broadcast_to(V[0], (size, V.shape[1])).copy()
    for i in range(1, V.shape[0]):
        t = rng.random(size)[:, None] ** (1.0 / i)
        rho = t * rho + (1.0 - t) * V[i]
    return rho


def nearest_neighbors(seed_latent, cohort_latents, cohort_ids, m: int) -> list[int]:
    """The ``m`` cohort ids closest in squared Euclidean distance; ties by lower id."""
    Z = np.atleast_2d(np.asarray(cohort_latents, dtype=float))
    ids = np.asarray(cohort_ids)
    if len(ids) < m:
        raise AugmentationUnavailable(f"cohort has {len(ids)} members, need m={m}")
    dist = ((Z - np.asarray(seed_latent, dtype=float)) ** 2).sum(axis=1)
    order = np.lexsort((ids, dist))
    return [int(i) for i in ids[order[:m]]]


def _cohort(ds: Dataset, seed_row: int, same_group: bool) -> np.ndarray:
    mask = ds.labels == ds.labels[seed_row]
    if same_group:
        mask &= ds.groups == ds.groups[seed_row]
    mask[seed_row] = False
    return np.flatnonzero(mask)


def gsmote_sample(ds: Dataset, codec: LatentCodec, seed_row: int, cfg: AugmentConfig,
                  seed=None) -> tuple[np.ndarray, int]:
    """One synthetic ``(features, label)`` pair grown from ``ds[seed_row]``.

    ``seed`` may be an int or a ``numpy.random.Generator``; it defaults to
    ``cfg.seed``.
    """
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    Z = codec.encode_dataset(ds)
    cohort = _cohort(ds, seed_row, cfg.same_group)
    if cohort.size < cfg.m:
        raise AugmentationUnavailable(
            f"row {seed_row}: cohort has {cohort.size} other members, need m={cfg.m}")
    pool = nearest_neighbors(Z[seed_row], Z[cohort], cohort, cfg.m)
    chosen = rng.choice(pool, size=cfg.k, replace=False)
    vertices = Z[chosen]
    if cfg.include_seed:
        vertices = np.vstack([Z[seed_row][None, :], vertices])
    z = sample_simplex(vertices, rng)
    x = codec.decode(z[None, :])[0]
    return x, int(ds.labels[seed_row])


def smote_classic(ds: Dataset, codec: LatentCodec, seed_row: int, m: int,
                  seed=None) -> tuple[np.ndarray, int]:
    """Segment interpolation between the seed and one of its ``m`` neighbours."""
    cfg = AugmentConfig(m=m, k=1, include_seed=True,
                        seed=0 if isinstance(seed, np.random.Generator) or seed is None else seed)
    return gsmote_sample(ds, codec, seed_row, cfg, seed)


def sweep_mk(grid: Iterable[tuple[int, int]], run_cell: Callable[[AugmentConfig, int], float],
             seeds: Sequence[int], base: AugmentConfig | None = None) -> list[dict]:
    """Evaluate ``run_cell(aug_cfg, seed) -> min-group accuracy`` over an (m, k) grid.

    Cells with ``k > m`` are reported as invalid and not run.  A failing run
    is recorded in its row without stopping the sweep.
    """
    base = base or AugmentConfig()
    rows = []
    for m, k in grid:
        row = {"m": int(m), "k": int(k), "valid": k <= m, "n_seeds": 0,
               "mean_min_group_accuracy": float("nan"),
               "std_min_group_accuracy": float("nan"), "errors": ""}
        if k > m or m < 1 or k < 1:
            row["valid"] = False
            rows.append(row)
            continue
        cfg = AugmentConfig(m=int(m), k=int(k), include_seed=base.include_seed,
                            same_group=base.same_group, seed=base.seed)
        vals, errs = [], []
        for s in seeds:
            try:
                vals.append(float(run_cell(cfg, s)))
            except Exception as exc:  # one bad cell must not abort the grid
                errs.append(f"seed {s}: {exc}")
        if vals:
            row["mean_min_group_accuracy"] = float(np.mean(vals))
            row["std_min_group_accuracy"] = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
        row["n_seeds"] = len(vals)
        row["errors"] = "; ".join(errs)
        rows.append(row)
    return rows


def grid(ms: Sequence[int], ks: Sequence[int]) -> list[tuple[int, int]]:
    return list(itertools.product(ms, ks))
