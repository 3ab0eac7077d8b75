"""Train a baseline and a DEO-regularised logistic model, then audit the change.

The two groups in the ``leveling_down`` benchmark want different linear
boundaries.  A strong penalty on the TPR gap closes it mostly by making the
better-served group worse, and the audit says so.

    python demos/leveling_down_walkthrough.py [seed]
"""
import sys

from paretofair.benchmarks import get_benchmark
from paretofair.metrics import classify_intervention
from paretofair.models import evaluate, train

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
bench = get_benchmark("leveling_down")
tr, ev, te, _ = bench.datasets(seed)

reports = {}
for lam in (0.0, 2.0, 10.0):
    result = train(bench.make_model(tr.d, seed), tr, ev, bench.train_config(seed, reg_weight=lam))
    rep = evaluate(result.best_model(), te)
    reports[lam] = rep
    accs = "  ".join(f"{n}={a:.3f}" for n, a in zip(rep.group_names, rep.accuracies))
    print(f"reg_weight={lam:<5g} {accs}  min={rep.min_group_accuracy:.3f}  "
          f"DEO={rep.fairness()['deo_max']:.3f}")

print()
print(classify_intervention(reports[0.0], reports[10.0]).table())
