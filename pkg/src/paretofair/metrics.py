"""Per-group confusion statistics, accuracy-based fairness gaps and Pareto audits.

Rates that cannot be computed (a group without positives has no TPR) are kept
as :class:`Undefined` values carrying a reason.  They are never replaced by 0
or 1, since that would invent a fairness value.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Undefined",
    "GroupReport",
    "ParetoVerdict",
    "VERDICTS",
    "GroupMismatchError",
    "confusion_by_group",
    "deo",
    "deodds",
    "minmax_summary",
    "classify_intervention",
]

VERDICTS = ("pareto_improvement", "trade_off", "leveling_down", "pareto_degradation_partial")


class GroupMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Undefined:
    """Marker for a rate or gap that has no value; ``reason`` says why."""

    reason: str

    def __bool__(self):
        return False

    def to_json(self):
        return {"undefined": self.reason}


def _is_def(v) -> bool:
    return not isinstance(v, Undefined)


def _ratio(num: int, den: int, what: str):
    if den == 0:
        return Undefined(f"no {what}")
    return num / den


def _value_to_json(v):
    return v.to_json() if isinstance(v, Undefined) else v


@dataclass(frozen=True, eq=False)
class GroupReport:
    """Exact per-group confusion counts plus everything derived from them."""

    group_names: tuple[str, ...]
    tp: np.ndarray
    fp: np.ndarray
    tn: np.ndarray
    fn: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            if arr.shape != (len(self.group_names),) or np.any(arr < 0):
                raise ValueError(f"{name} must hold one non-negative count per group")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "group_names", tuple(self.group_names))

    @property
    def n_groups(self) -> int:
        return len(self.group_names)

    @property
    def sizes(self) -> np.ndarray:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def positives(self) -> np.ndarray:
        return self.tp + self.fn

    @property
    def negatives(self) -> np.ndarray:
        return self.fp + self.tn

    def accuracy(self, g: int):
        return _ratio(int(self.tp[g] + self.tn[g]), int(self.sizes[g]), "members")

    def tpr(self, g: int):
        return _ratio(int(self.tp[g]), int(self.positives[g]), "positives")

    def fpr(self, g: int):
        return _ratio(int(self.fp[g]), int(self.negatives[g]), "negatives")

    @property
    def accuracies(self) -> list:
        return [self.accuracy(g) for g in range(self.n_groups)]

    @property
    def tprs(self) -> list:
        return [self.tpr(g) for g in range(self.n_groups)]

    @property
    def fprs(self) -> list:
        return [self.fpr(g) for g in range(self.n_groups)]

    @property
    def overall_accuracy(self) -> float:
        return float((self.tp.sum() + self.tn.sum()) / self.sizes.sum())

    @property
    def overall_tpr(self):
        return _ratio(int(self.tp.sum()), int(self.positives.sum()), "positives")

    @property
    def min_group_accuracy(self) -> float:
        return minmax_summary(self)["min_group_accuracy"]

    def pairs(self):
        return list(itertools.combinations(range(self.n_groups), 2))

    def fairness(self) -> dict:
        """DEO and DEOdds for every group pair, plus the max over defined pairs."""
        out = {"deo": {}, "deodds": {}}
        for a, b in self.pairs():
            key = f"{self.group_names[a]}|{self.group_names[b]}"
            out["deo"][key] = deo(self, a, b)
            out["deodds"][key] = deodds(self, a, b)
        for name in ("deo", "deodds"):
            vals = [v for v in out[name].values() if _is_def(v)]
            out[f"{name}_max"] = max(vals) if vals else Undefined("no defined pair")
        return out

    def summary(self) -> dict:
        """Flat row in the shape of the usual results tables."""
        mm = minmax_summary(self)
        fair = self.fairness()
        accs = [a for a in self.accuracies if _is_def(a)]
        tprs = [t for t in self.tprs if _is_def(t)]
        return {
            "accuracy": self.overall_accuracy,
            "max_group_accuracy": max(accs),
            "min_group_accuracy": mm["min_group_accuracy"],
            "tpr": self.overall_tpr,
            "max_group_tpr": max(tprs) if tprs else Undefined("no positives"),
            "min_group_tpr": mm["min_group_tpr"],
            "deo": fair["deo_max"],
            "deodds": fair["deodds_max"],
        }

    def to_dict(self) -> dict:
        fair = self.fairness()
        return {
            "group_names": list(self.group_names),
            "counts": {k: getattr(self, k).tolist() for k in ("tp", "fp", "tn", "fn")},
            "accuracy": [_value_to_json(v) for v in self.accuracies],
            "tpr": [_value_to_json(v) for v in self.tprs],
            "fpr": [_value_to_json(v) for v in self.fprs],
            "overall_accuracy": self.overall_accuracy,
            "min_group_accuracy": self.min_group_accuracy,
            "deo": {k: _value_to_json(v) for k, v in fair["deo"].items()},
            "deodds": {k: _value_to_json(v) for k, v in fair["deodds"].items()},
            "deodds_normalization": "raw sum of TPR and FPR gaps, range [0, 2]",
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GroupReport":
        c = doc["counts"]
        return cls(tuple(doc["group_names"]), c["tp"], c["fp"], c["tn"], c["fn"],
                   meta=dict(doc.get("meta", {})))


def confusion_by_group(predictions, ds) -> GroupReport:
    """Count TP/FP/TN/FN per group for hard 0/1 predictions on ``ds``."""
    pred = np.asarray(predictions)
    if pred.shape != (ds.n,):
        raise ValueError(f"predictions have shape {pred.shape}, dataset has {ds.n} rows")
    pred = pred.astype(bool)
    y = ds.labels.astype(bool)
    G = ds.n_groups

    def count(mask):
        return np.bincount(ds.groups[mask], minlength=G)

    return GroupReport(ds.group_names, count(pred & y), count(pred & ~y),
                       count(~pred & ~y), count(~pred & y))


def deo(report: GroupReport, a: int, b: int):
    """``|TPR_a - TPR_b|``, or :class:`Undefined` if either TPR is."""
    ta, tb = report.tpr(a), report.tpr(b)
    for g, t in ((a, ta), (b, tb)):
        if not _is_def(t):
            return Undefined(f"TPR of group {report.group_names[g]!r} undefined: {t.reason}")
    return abs(ta - tb)


def deodds(report: GroupReport, a: int, b: int):
    """Sum of the TPR gap and the FPR gap between groups ``a`` and ``b``.

    This is the unnormalised sum over label values, so it lies in [0, 2].
    """
    gap = 0.0
    for rate in (report.tpr, report.fpr):
        ra, rb = rate(a), rate(b)
        for g, r in ((a, ra), (b, rb)):
            if not _is_def(r):
                return Undefined(f"rate of group {report.group_names[g]!r} undefined: {r.reason}")
        gap += abs(ra - rb)
    return gap


def minmax_summary(report: GroupReport) -> dict:
    """Worst-group accuracy and TPR; ties go to the lowest group id."""
    accs = report.accuracies
    defined = [g for g, a in enumerate(accs) if _is_def(a)]
    if not defined:
        raise ValueError("no group has members")
    worst = min(defined, key=lambda g: (accs[g], g))
    ties = [g for g in defined if accs[g] == accs[worst]]
    tprs = [t for t in report.tprs if _is_def(t)]
    return {
        "min_group_accuracy": accs[worst],
        "argmin_group": worst,
        "argmin_ties": ties,
        "min_group_tpr": min(tprs) if tprs else Undefined("no group has positives"),
    }


@dataclass(frozen=True)
class ParetoVerdict:
    group_names: tuple[str, ...]
    deltas: tuple[float, ...]
    verdict: str
    worst_group: int
    worst_group_delta: float
    tolerance: float
    unchanged: bool = False

    @property
    def acceptable(self) -> bool:
        return self.verdict in ("pareto_improvement", "trade_off")

    def to_dict(self) -> dict:
        return {
            "group_names": list(self.group_names),
            "deltas": list(self.deltas),
            "verdict": self.verdict,
            "worst_group": self.group_names[self.worst_group],
            "worst_group_delta": self.worst_group_delta,
            "tolerance": self.tolerance,
            "unchanged": self.unchanged,
        }

    def table(self) -> str:
        w = max(len("group"), *(len(s) for s in self.group_names))
        lines = [f"{'group':<{w}}  {'delta_acc':>10}"]
        for name, dlt in zip(self.group_names, self.deltas):
            mark = "  (worst at baseline)" if name == self.group_names[self.worst_group] else ""
            lines.append(f"{name:<{w}}  {dlt:>+10.4f}{mark}")
        tag = " (all deltas within tolerance)" if self.unchanged else ""
        lines.append(f"verdict: {self.verdict}{tag}")
        return "\n".join(lines)


def classify_intervention(baseline: GroupReport, intervention: GroupReport,
                          tolerance: float = 1e-3) -> ParetoVerdict:
    """Compare per-group accuracies of an intervention against a baseline.

    Each delta is read as +1, 0 or -1 using the symmetric ``tolerance``:

    * all -1: ``leveling_down``
    * no -1 and at least one +1: ``pareto_improvement``
    * all 0: ``trade_off`` with ``unchanged=True``
    * the group worst at baseline is +1 and some other group is -1: ``trade_off``
    * anything else: ``pareto_degradation_partial``
    """
    if tolerance < 0:
        raise ValueError("tolerance must be non-negative")
    if tuple(baseline.group_names) != tuple(intervention.group_names):
        raise GroupMismatchError(
            f"group sets differ: baseline {list(baseline.group_names)} vs "
            f"intervention {list(intervention.group_names)}")
    base, new = baseline.accuracies, intervention.accuracies
    if not all(map(_is_def, base + new)):
        raise ValueError("every group needs members in both reports")
    deltas = tuple(float(n - b) for b, n in zip(base, new))
    signs = [1 if d > tolerance else (-1 if d < -tolerance else 0) for d in deltas]
    worst = minmax_summary(baseline)["argmin_group"]
    unchanged = False
    if all(s == -1 for s in signs):
        verdict = "leveling_down"
    elif -1 not in signs and 1 in signs:
        verdict = "pareto_improvement"
    elif all(s == 0 for s in signs):
        verdict, unchanged = "trade_off", True
    elif signs[worst] == 1:
        verdict = "trade_off"
    else:
        verdict = "pareto_degradation_partial"
    return ParetoVerdict(tuple(baseline.group_names), deltas, verdict, worst,
                         deltas[worst], float(tolerance), unchanged)

