"""Grow an augmented pool toward the weakest group and compare with the baseline.

On the ``imbalanced`` benchmark the minority group has 50 training rows
against 1000.  Adaptive g-SMOTE keeps adding synthetic minority rows while the
minority group lags on the eval split.

    python demos/adaptive_sampling.py [seed]
"""
import sys
from collections import Counter

from paretofair.adaptive import AdaptiveConfig, adaptive_train
from paretofair.augment import AugmentConfig, IdentityCodec
from paretofair.benchmarks import get_benchmark
from paretofair.metrics import classify_intervention
from paretofair.models import evaluate, train

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
bench = get_benchmark("imbalanced")
tr, ev, te, _ = bench.datasets(seed)
cfg = bench.train_config(seed)

base = evaluate(train(bench.make_model(tr.d, seed), tr, ev, cfg).best_model(), te)
res = adaptive_train(bench.make_model(tr.d, seed), tr, ev, IdentityCodec(),
                     AugmentConfig(m=10, k=3, seed=seed), AdaptiveConfig(), cfg)
adapt = evaluate(res.best_model(), te)

targets = Counter(tr.group_names[t] for _, t in res.targets)
print(f"augmentation rounds: {len(res.targets)}, targets: {dict(targets)}")
print(f"pool: {len(res.pool)} rows ({res.pool.n_synthetic} synthetic, "
      f"{res.fallbacks} duplicated for lack of neighbours)")
print(f"min-group accuracy: baseline {base.min_group_accuracy:.3f} -> "
      f"adaptive {adapt.min_group_accuracy:.3f}\n")
print(classify_intervention(base, adapt).table())
