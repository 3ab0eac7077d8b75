"""Command-line harness: generate data, train, evaluate, decompose, sweep, audit.

Everything an experiment needs lives in one YAML document::

    name: leveling_down
    data:
      benchmark: leveling_down        # or synthetic: {...} with split/holdout, or paths: {...}
    method: regularized               # baseline | regularized | gsmote | adaptive_gsmote | oversample
    train: {reg_weight: 10}
    sweep: [0, 0.5, 1, 2, 5, 10]
    seeds: [0, 1, 2]

Every output file carries the package version and a hash of the config.
Exit codes: 0 success, 2 invalid input, 3 failed audit, 4 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml
from scipy.stats import spearmanr

from . import __version__
from .adaptive import AdaptiveConfig, adaptive_train, static_gsmote_train
from .augment import AugmentConfig, FileBackedCodec, IdentityCodec, grid, sweep_mk
from .benchmarks import CAPACITIES, build_model, get_benchmark, make_trainer
from .data import (DataError, Dataset, SplitSpec, SyntheticSpec, generate_synthetic,
                   load_csv, load_metadata, save_csv, save_metadata, stratified_split)
from .decomposition import LOSSES, ReplicateError, decompose_fairness
from .metrics import GroupMismatchError, GroupReport, Undefined, classify_intervention
from .models import DivergenceError, PredictionModel, TrainConfig, evaluate, train

logger = logging.getLogger("paretofair")

EXIT_OK, EXIT_INVALID, EXIT_AUDIT, EXIT_RUNTIME = 0, 2, 3, 4
METHODS = ("baseline", "regularized", "gsmote", "adaptive_gsmote", "oversample")
SUMMARY_COLUMNS = ("accuracy", "max_group_accuracy", "min_group_accuracy", "tpr",
                   "max_group_tpr", "min_group_tpr", "deo", "deodds")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Configuration

_TOP_KEYS = {"name", "data", "model", "train", "method", "augment", "adaptive", "codec",
             "sweep", "sweep_mk", "seeds", "decompose", "out"}
_DECOMPOSE_DEFAULTS = {"loss": "zero_one", "replicates": 41, "resampling": "bootstrap",
                       "subsample_size": 0.5, "capacity": "high", "steps": None,
                       "learning_rate": None, "momentum": None, "extra_hidden": None,
                       "points_csv": False}


def _section(doc: dict, key: str, allowed=None) -> dict:
    sec = doc.get(key) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"{key}: expected a mapping")
    if allowed is not None:
        unknown = sorted(set(sec) - set(allowed))
        if unknown:
            raise ConfigError(f"{key}: unknown field(s) {unknown}")
    return dict(sec)


def _build(cls, section: str, values: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"{section}: unknown field(s) {unknown}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment document; ``doc`` keeps the raw mapping for hashing."""

    name: str
    data: dict
    model: dict
    train: TrainConfig
    method: str
    augment: AugmentConfig
    adaptive: AdaptiveConfig
    codec: dict
    sweep: tuple | None
    sweep_mk: dict | None
    seeds: tuple[int, ...]
    decompose: dict
    out: str
    doc: dict = dataclasses.field(repr=False, compare=False)
    base_dir: str = "."

    @classmethod
    def from_dict(cls, doc: dict, base_dir=".") -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a mapping")
        unknown = sorted(set(doc) - _TOP_KEYS)
        if unknown:
            raise ConfigError(f"unknown top-level field(s) {unknown}")
        data = _section(doc, "data", {"benchmark", "synthetic", "split", "holdout", "paths",
                                      "reseed"})
        sources = [k for k in ("benchmark", "synthetic", "paths") if k in data]
        if len(sources) != 1:
            raise ConfigError("data: give exactly one of benchmark, synthetic, paths")
        try:
            bench = get_benchmark(data["benchmark"]) if "benchmark" in data else None
        except ValueError as exc:
            raise ConfigError(f"data.benchmark: {exc}") from None
        if "synthetic" in data:
            _build(SyntheticSpec, "data.synthetic", data["synthetic"])
            if ("split" in data) == ("holdout" in data):
                raise ConfigError("data: synthetic data needs exactly one of split, holdout")
            if "split" in data:
                _split_spec(data)
            else:
                hold = _section(data, "holdout", {"eval_n_per_group", "test_n_per_group"})
                if set(hold) != {"eval_n_per_group", "test_n_per_group"}:
                    raise ConfigError("data.holdout: needs eval_n_per_group and test_n_per_group")
        if "paths" in data:
            paths = _section(data, "paths", {"train", "eval", "test", "metadata"})
            missing = sorted({"train", "eval", "test"} - set(paths))
            if missing:
                raise ConfigError(f"data.paths: missing {missing}")

        model = _section(doc, "model", {"kind", "hidden"}) or dict(
            bench.model if bench else {"kind": "logistic"})
        if model.get("kind", "logistic") not in ("logistic", "mlp"):
            raise ConfigError(f"model.kind: unknown kind {model.get('kind')!r}")

        train_doc = dataclasses.asdict(bench.train) if bench else {}
        train_doc.pop("seed", None)
        user_train = _section(doc, "train")
        if "seed" in user_train:
            raise ConfigError("train.seed: seeds come from the top-level seeds list")
        train_doc.update(user_train)
        if "group_pair" in train_doc:
            train_doc["group_pair"] = tuple(train_doc["group_pair"])
        train_cfg = _build(TrainConfig, "train", train_doc)

        method = doc.get("method", "baseline")
        if method not in METHODS:
            raise ConfigError(f"method: must be one of {METHODS}, got {method!r}")
        aug_doc = _section(doc, "augment")
        if "seed" in aug_doc:
            raise ConfigError("augment.seed: seeds come from the top-level seeds list")
        augment = _build(AugmentConfig, "augment", aug_doc)
        adaptive = _build(AdaptiveConfig, "adaptive", _section(doc, "adaptive"))
        codec = _section(doc, "codec", {"kind", "path"}) or {"kind": "identity"}
        if codec.get("kind") not in ("identity", "file"):
            raise ConfigError("codec.kind: must be identity or file")
        if codec["kind"] == "file" and "paths" not in data:
            raise ConfigError("codec.kind: a file-backed codec needs data.paths")

        sweep = doc.get("sweep")
        if sweep is not None:
            if not isinstance(sweep, list) or not sweep:
                raise ConfigError("sweep: must be a non-empty list of reg_weight values")
            if any(not isinstance(v, (int, float)) or v < 0 for v in sweep):
                raise ConfigError("sweep: reg_weight values must be non-negative numbers")
            sweep = tuple(sorted(float(v) for v in sweep))
        smk = doc.get("sweep_mk")
        if smk is not None:
            smk = _section(doc, "sweep_mk", {"m", "k"})
            if not smk.get("m") or not smk.get("k"):
                raise ConfigError("sweep_mk: needs non-empty m and k lists")

        seeds = doc.get("seeds", [0])
        if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
            raise ConfigError("seeds: must be a non-empty list of integers")

        dec = dict(_DECOMPOSE_DEFAULTS)
        dec.update(_section(doc, "decompose", set(_DECOMPOSE_DEFAULTS)))
        if bench and "capacity" not in (doc.get("decompose") or {}) and bench.decompose:
            dec["capacity"] = bench.decompose.get("capacity", dec["capacity"])
        if dec["loss"] not in LOSSES:
            raise ConfigError(f"decompose.loss: must be one of {LOSSES}")
        if dec["capacity"] not in CAPACITIES:
            raise ConfigError(f"decompose.capacity: must be one of {CAPACITIES}")
        if dec["resampling"] not in ("bootstrap", "subsample"):
            raise ConfigError("decompose.resampling: must be bootstrap or subsample")

        name = str(doc.get("name", data.get("benchmark", "experiment")))
        return cls(name, data, model, train_cfg, method, augment, adaptive, codec, sweep, smk,
                   tuple(seeds), dec, str(doc.get("out", f"runs/{name}")), doc, str(base_dir))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = yaml.safe_load(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from None
        return cls.from_dict(doc, path.parent)

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.doc, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_overrides(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _split_spec(data: dict) -> SplitSpec:
    return _build(SplitSpec, "data.split", _section(data, "split"))


def provenance(cfg_hash: str) -> dict:
    return {"tool": "paretofair", "version": __version__, "config_sha256": cfg_hash}


def _stamp(cfg_hash: str) -> str:
    return f"paretofair {__version__} config_sha256={cfg_hash}"


def _write_json(path, doc: dict, cfg_hash: str) -> None:
    doc = dict(doc, provenance=provenance(cfg_hash))
    Path(path).write_text(json.dumps(doc, indent=2, default=_json_default) + "\n")


def _json_default(v):
    if isinstance(v, Undefined):
        return v.to_json()
    if isinstance(v, np.generic):
        return v.item()
    raise TypeError(f"not JSON serialisable: {type(v).__name__}")


def _write_csv(path, header, rows, cfg_hash: str) -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write(f"# {_stamp(cfg_hash)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(r.get(h, "")) for h in header])


def _cell(v):
    if isinstance(v, Undefined):
        return "undefined"
    if isinstance(v, float):
        return format(v, ".10g")
    return v


# ---------------------------------------------------------------------------
# Data and methods

def load_datasets(cfg: ExperimentConfig, seed: int):
    """``(train, eval, test, true_conditional_or_None)`` for one seed."""
    data = cfg.data
    reseed = bool(data.get("reseed", True))
    offset = seed if reseed else 0
    if "benchmark" in data:
        return get_benchmark(data["benchmark"]).datasets(offset)
    if "synthetic" in data:
        spec = SyntheticSpec(**data["synthetic"])
        spec = spec.replace(seed=spec.seed + offset)
        if "split" in data:
            full, cond = generate_synthetic(spec)
            split = _split_spec(data)
            split = dataclasses.replace(split, seed=split.seed + offset)
            return (*stratified_split(full, split), cond)
        hold = data["holdout"]
        tr, cond = generate_synthetic(spec)
        ev, _ = generate_synthetic(spec.replace(n_per_group=hold["eval_n_per_group"],
                                                seed=spec.seed + 1_000_000))
        te, _ = generate_synthetic(spec.replace(n_per_group=hold["test_n_per_group"],
                                                seed=spec.seed + 2_000_000))
        return tr, ev, te, cond
    paths = {k: Path(cfg.base_dir) / v for k, v in data["paths"].items()}
    names = load_metadata(paths["metadata"])["group_names"] if "metadata" in paths else None
    tr = load_csv(paths["train"], group_names=names)
    names = names or list(tr.group_names)
    return (tr, load_csv(paths["eval"], group_names=names),
            load_csv(paths["test"], group_names=names), None)


def oversample(ds: Dataset, seed) -> Dataset:
    """Duplicate rows of every (group, label) cell up to the largest cell's size.

    Each smaller cell is repeated whole as often as it fits, and the remainder
    is filled with a random subset of its rows, drawn without replacement.
    """
    rng = np.random.default_rng(seed)
    cells = [ds.cell_indices(g, y) for g in range(ds.n_groups) for y in (0, 1)]
    cells = [c for c in cells if c.size]
    target = max(c.size for c in cells)
    parts = []
    for c in cells:
        reps, rest = divmod(target, c.size)
        parts.append(np.concatenate([np.tile(c, reps), np.sort(rng.permutation(c)[:rest])]))
    return ds.subset(np.sort(np.concatenate(parts), kind="stable"))


def _codec(cfg: ExperimentConfig, train_ds: Dataset):
    if cfg.codec.get("kind", "identity") == "identity":
        return IdentityCodec()
    return FileBackedCodec.from_csv(Path(cfg.base_dir) / cfg.codec["path"], train_ds)


def run_method(cfg: ExperimentConfig, method: str, seed: int, train_ds: Dataset,
               eval_ds: Dataset, reg_weight: float | None = None,
               augment: AugmentConfig | None = None):
    """Train one model with ``method``; returns the training result."""
    model = build_model(cfg.model, train_ds.d, seed)
    lam = cfg.train.reg_weight if reg_weight is None else reg_weight
    if method == "baseline":
        lam = 0.0
    tcfg = cfg.train.replace(seed=seed, reg_weight=lam)
    if method in ("baseline", "regularized"):
        return train(model, train_ds, eval_ds, tcfg)
    if method == "oversample":
        return train(model, oversample(train_ds, seed), eval_ds, tcfg)
    aug = dataclasses.replace(augment or cfg.augment, seed=seed)
    runner = adaptive_train if method == "adaptive_gsmote" else static_gsmote_train
    return runner(model, train_ds, eval_ds, _codec(cfg, train_ds), aug, cfg.adaptive, tcfg)


def _checkpoint_rows(result) -> list[dict]:
    rows = []
    for ck in result.checkpoints:
        row = {"step": ck.step, "objective": ck.objective, "train_loss": ck.train_loss,
               "overall_accuracy": ck.report.overall_accuracy,
               "min_group_accuracy": ck.report.min_group_accuracy,
               "best": int(ck is result.best)}
        for name, acc in zip(ck.report.group_names, ck.report.accuracies):
            row[f"acc_{name}"] = acc
        rows.append(row)
    return rows


def _report_row(report: GroupReport) -> dict:
    row = report.summary()
    for name, acc in zip(report.group_names, report.accuracies):
        row[f"acc_{name}"] = acc
    return row


def _job(cfg: ExperimentConfig, method: str, seed: int, reg_weight, out_dir: str) -> dict:
    """One seed of one method: train, test, write per-seed artifacts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h = cfg.config_hash
    row = {"method": method, "seed": seed, "reg_weight": reg_weight, "status": "ok"}
    try:
        tr, ev, te, _ = load_datasets(cfg, seed)
        result = run_method(cfg, method, seed, tr, ev, reg_weight)
    except DivergenceError as exc:
        row["status"] = f"failed: {exc}"
        (out / "FAILED").write_text(f"{exc}\n")
        return row
    best = result.best_model()
    report = evaluate(best, te)
    doc = best.to_dict()
    doc["provenance"] = provenance(h)
    (out / "model.json").write_text(json.dumps(doc) + "\n")
    meta = {"method": method, "seed": seed, "reg_weight": reg_weight,
            "best_step": result.best.step, "penalty_skips": result.reg_skips}
    pool = getattr(result, "pool", None)
    if pool is not None:
        pool.write_log(out / "pool.csv", header_comment=_stamp(h))
        meta["synthetic_rows"] = pool.n_synthetic
        meta["fallbacks"] = result.fallbacks
    _write_json(out / "report.json", dict(report.to_dict(), meta=meta), h)
    ck_rows = _checkpoint_rows(result)
    _write_csv(out / "checkpoints.csv", list(ck_rows[0]), ck_rows, h)
    row.update(_report_row(report), best_step=result.best.step)
    return row


def _run_jobs(jobs: list[tuple], n_workers: int) -> list[dict]:
    if n_workers <= 1 or len(jobs) <= 1:
        return [_job(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        futures = [pool.submit(_job, *j) for j in jobs]
        return [f.result() for f in futures]


def _mean_std(vals):
    vals = [float(v) for v in vals if not isinstance(v, Undefined)]
    if not vals:
        return float("nan"), float("nan")
    return float(np.mean(vals)), float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0


def aggregate(rows: list[dict], key: str) -> list[dict]:
    """Mean and sample std over successful seeds, one row per value of ``key``."""
    out = []
    for value in sorted({r[key] for r in rows}):
        grp = sorted((r for r in rows if r[key] == value), key=lambda r: r["seed"])
        ok = [r for r in grp if r["status"] == "ok"]
        agg = {key: value, "n_seeds": len(ok),
               "failed_seeds": " ".join(str(r["seed"]) for r in grp if r["status"] != "ok")}
        metrics = list(SUMMARY_COLUMNS) + sorted(
            {k for r in ok for k in r if k.startswith("acc_")})
        for m in metrics:
            agg[f"{m}_mean"], agg[f"{m}_std"] = _mean_std([r[m] for r in ok])
        out.append(agg)
    return out


def spearman(x, y):
    """Spearman's rho, or :class:`Undefined` when it cannot be computed."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    keep = np.isfinite(x) & np.isfinite(y)
    if keep.sum() < 2:
        return Undefined("fewer than two sweep values")
    if np.ptp(x[keep]) == 0 or np.ptp(y[keep]) == 0:
        return Undefined("constant input")
    return float(spearmanr(x[keep], y[keep]).statistic)


# ---------------------------------------------------------------------------
# Commands

def _seeds(cfg: ExperimentConfig, args) -> list[int]:
    return [s + args.seed_offset for s in cfg.seeds]


def _out_dir(cfg: ExperimentConfig, args) -> Path:
    out = Path(args.out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(cfg: ExperimentConfig, args) -> int:
    if "paths" in cfg.data:
        raise ConfigError("data: generate needs a synthetic source, not paths")
    out = _out_dir(cfg, args)
    seed = _seeds(cfg, args)[0]
    tr, ev, te, _ = load_datasets(cfg, seed)
    h = cfg.config_hash
    for name, ds in (("train", tr), ("eval", ev), ("test", te)):
        save_csv(ds, out / f"{name}.csv", header_comment=_stamp(h))
    spec = (get_benchmark(cfg.data["benchmark"]).spec.to_dict() if "benchmark" in cfg.data
            else cfg.data["synthetic"])
    save_metadata(out / "metadata.json", tr.group_names, seed=seed, spec=spec,
                  rows={"train": tr.n, "eval": ev.n, "test": te.n},
                  provenance=provenance(h))
    print(f"wrote {tr.n}/{ev.n}/{te.n} train/eval/test rows to {out}")
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg, args)
    method = args.method or cfg.method
    jobs = [(cfg, method, s, None, str(out / method / f"seed_{s}")) for s in _seeds(cfg, args)]
    rows = _run_jobs(jobs, args.jobs)
    agg = aggregate(rows, "method")
    _write_csv(out / method / "seeds.csv", _columns(rows), rows, cfg.config_hash)
    _write_csv(out / f"aggregate_{method}.csv", list(agg[0]), agg, cfg.config_hash)
    _print_aggregate(agg, "method")
    return EXIT_RUNTIME if any(r["status"] != "ok" for r in rows) else EXIT_OK


def _columns(rows: list[dict]) -> list[str]:
    cols: list[str] = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    return cols


def _print_aggregate(agg: list[dict], key: str) -> None:
    for row in agg:
        parts = [f"{key}={row[key]}", f"seeds={row['n_seeds']}"]
        for m in ("accuracy", "min_group_accuracy", "deo", "deodds"):
            parts.append(f"{m}={row[f'{m}_mean']:.4f}±{row[f'{m}_std']:.4f}")
        if row["failed_seeds"]:
            parts.append(f"failed=[{row['failed_seeds']}]")
        print("  ".join(parts))


def cmd_sweep(cfg: ExperimentConfig, args) -> int:
    if not cfg.sweep:
        raise ConfigError("sweep: needs a non-empty list of reg_weight values")
    out = _out_dir(cfg, args)
    jobs = [(cfg, "regularized", s, lam, str(out / "sweep" / f"reg_{lam:g}" / f"seed_{s}"))
            for lam in cfg.sweep for s in _seeds(cfg, args)]
    rows = _run_jobs(jobs, args.jobs)
    agg = aggregate(rows, "reg_weight")
    h = cfg.config_hash
    _write_csv(out / "sweep_seeds.csv", _columns(rows), rows, h)
    _write_csv(out / "sweep.csv", list(agg[0]), agg, h)
    lams = [r["reg_weight"] for r in agg]
    corr = {"spearman_reg_weight_deo": spearman(lams, [r["deo_mean"] for r in agg]),
            "spearman_reg_weight_min_group_accuracy":
                spearman(lams, [r["min_group_accuracy_mean"] for r in agg])}
    _write_json(out / "sweep_correlations.json", corr, h)
    _print_aggregate(agg, "reg_weight")
    for k, v in corr.items():
        print(f"{k}: {v.reason if isinstance(v, Undefined) else format(v, '.4f')}"
              + (" (undefined)" if isinstance(v, Undefined) else ""))
    return EXIT_RUNTIME if any(r["status"] != "ok" for r in rows) else EXIT_OK


def cmd_evaluate(cfg: ExperimentConfig | None, args) -> int:
    if not args.model or not args.data:
        raise ConfigError("evaluate: needs --model and --data")
    names = load_metadata(args.metadata)["group_names"] if args.metadata else None
    ds = load_csv(args.data, group_names=names)
    doc = json.loads(Path(args.model).read_text())
    model = PredictionModel.from_dict(doc)
    report = evaluate(model, ds)
    h = _inputs_hash(args.model, args.data)
    target = Path(args.out) if args.out else None
    if target is not None:
        target.parent.mkdir(parents=True, exist_ok=True)
        _write_json(target, report.to_dict(), h)
    row = report.summary()
    print("  ".join(f"{k}={_fmt(v)}" for k, v in row.items()))
    return EXIT_OK


def _fmt(v):
    return "undefined" if isinstance(v, Undefined) else f"{v:.4f}"


def _inputs_hash(*paths) -> str:
    sha = hashlib.sha256()
    for p in paths:
        sha.update(Path(p).read_bytes())
    return sha.hexdigest()[:16]


def cmd_audit(cfg, args) -> int:
    try:
        base = GroupReport.from_dict(json.loads(Path(args.baseline).read_text()))
        new = GroupReport.from_dict(json.loads(Path(args.intervention).read_text()))
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise ConfigError(f"audit: cannot read report: {exc}") from None
    try:
        verdict = classify_intervention(base, new, args.tolerance)
    except GroupMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(verdict.table())
    if args.out:
        target = Path(args.out)
        target.parent.mkdir(parents=True, exist_ok=True)
        _write_json(target, verdict.to_dict(), _inputs_hash(args.baseline, args.intervention))
    return EXIT_OK if verdict.acceptable else EXIT_AUDIT


def cmd_decompose(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg, args) / "decompose"
    out.mkdir(parents=True, exist_ok=True)
    dec = dict(cfg.decompose)
    if args.capacity:
        dec["capacity"] = args.capacity
    trainer = make_trainer(dec["capacity"], dec["steps"], dec["learning_rate"],
                           dec["momentum"], dec["extra_hidden"])
    h = cfg.config_hash
    rows = []
    status = EXIT_OK
    for s in _seeds(cfg, args):
        tr, _, te, cond = load_datasets(cfg, s)
        try:
            rep = decompose_fairness(te, cond, trainer, tr, R=int(dec["replicates"]),
                                     loss=dec["loss"], seed=s, mode=dec["resampling"],
                                     subsample_size=dec["subsample_size"])
        except ReplicateError as exc:
            logger.error("seed %d: %s", s, exc)
            rows.append({"seed": s, "status": f"failed: {exc}"})
            status = EXIT_RUNTIME
            continue
        doc = rep.to_dict()
        doc["meta"] = dict(doc["meta"], capacity=dec["capacity"], trainer=trainer.options)
        _write_json(out / f"seed_{s}.json", doc, h)
        if dec["points_csv"] or args.points:
            rep.write_points(out / f"points_seed_{s}.csv", te.group_names, _stamp(h))
        for g in rep.groups:
            if dec["loss"] == "squared":
                gap = abs(g.err - (g.N + g.B + g.V))
                print(f"seed {s} {g.name}: err={g.err:.6f} N+B+V={g.N + g.B + g.V:.6f}")
                if gap > 1e-9:
                    raise RuntimeError(f"squared-loss identity violated by {gap:.3g}")
            rows.append({"seed": s, "status": "ok", "group": g.name, **g.to_dict()})
        for key, val in rep.e_fair.items():
            print(f"seed {s} {key}: E_fair={val:.4f} (se {rep.e_fair_se[key]:.4f}) "
                  f"dominant={rep.dominant}")
    _write_csv(out / "groups.csv", _columns(rows), rows, h)
    return status


def cmd_sweep_mk(cfg: ExperimentConfig, args) -> int:
    if not cfg.sweep_mk:
        raise ConfigError("sweep_mk: needs m and k lists")
    method = cfg.method if cfg.method in ("gsmote", "adaptive_gsmote") else "adaptive_gsmote"
    data = {}

    def run_cell(aug: AugmentConfig, seed: int) -> float:
        if seed not in data:
            data[seed] = load_datasets(cfg, seed)
        tr, ev, te, _ = data[seed]
        res = run_method(cfg, method, seed, tr, ev, augment=aug)
        return evaluate(res.best_model(), te).min_group_accuracy

    rows = sweep_mk(grid(cfg.sweep_mk["m"], cfg.sweep_mk["k"]), run_cell,
                    _seeds(cfg, args), cfg.augment)
    out = _out_dir(cfg, args)
    _write_csv(out / "sweep_mk.csv", list(rows[0]), rows, cfg.config_hash)
    for r in rows:
        val = "invalid (k > m)" if not r["valid"] else (
            f"{r['mean_min_group_accuracy']:.4f}±{r['std_min_group_accuracy']:.4f}")
        print(f"m={r['m']} k={r['k']}: {val}" + (f"  errors: {r['errors']}" if r["errors"] else ""))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point

COMMANDS = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate,
            "decompose": cmd_decompose, "sweep": cmd_sweep, "audit": cmd_audit,
            "sweep-mk": cmd_sweep_mk}
_NEEDS_CONFIG = {"generate", "train", "decompose", "sweep", "sweep-mk"}


def _global_flags(parser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--config", default=d(None), help="experiment YAML file")
    parser.add_argument("--out", default=d(None), help="output directory (or file for audit/evaluate)")
    parser.add_argument("--jobs", type=int, default=d(1), help="parallel seed jobs")
    parser.add_argument("--seed-offset", type=int, default=d(0), help="added to every seed")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="paretofair", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)
    parsers = {name: sub.add_parser(name) for name in COMMANDS}
    for sp in parsers.values():
        _global_flags(sp, suppress=True)
    parsers["train"].add_argument("--method", choices=METHODS, help="override config method")
    parsers["evaluate"].add_argument("--model", help="model JSON")
    parsers["evaluate"].add_argument("--data", help="dataset CSV")
    parsers["evaluate"].add_argument("--metadata", help="metadata JSON fixing group ids")
    parsers["audit"].add_argument("baseline", help="baseline GroupReport JSON")
    parsers["audit"].add_argument("intervention", help="intervention GroupReport JSON")
    parsers["audit"].add_argument("--tolerance", type=float, default=1e-3)
    parsers["decompose"].add_argument("--capacity", choices=CAPACITIES)
    parsers["decompose"].add_argument("--points", action="store_true",
                                      help="also write the per-point CSV")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        cfg = None
        if args.command in _NEEDS_CONFIG:
            if not args.config:
                raise ConfigError(f"{args.command}: --config is required")
            cfg = ExperimentConfig.load(args.config)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (DivergenceError, ReplicateError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
