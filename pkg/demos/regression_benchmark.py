"""
Fold-averaged likelihood on a regression table
==============================================

Pass a CSV path (last column is the target) to use your own data, otherwise a
synthetic heteroscedastic set stands in. Each fold trains one five-member
ensemble; the first member alone gives the single-network score.

    python demos/regression_benchmark.py [path/to/housing.csv]
"""
import sys

import numpy as np

from deepens import (ArchSpec, EnsembleConfig, FoldSpec, evaluate, heteroscedastic, load_csv,
                     make_folds, predict, standardize, train_ensemble)

ds = load_csv(sys.argv[1]) if len(sys.argv) > 1 else heteroscedastic(500, seed=0)
print(ds.provenance, ds.features.shape)

nll = {1: [], 5: []}
rmse = {1: [], 5: []}
for k, (tr_idx, te_idx) in enumerate(make_folds(ds, FoldSpec(n_folds=20, test_fraction=0.1, seed=0))):
    (tr,), _ = standardize(ds.subset(tr_idx))
    te = ds.subset(te_idx)
    cfg = EnsembleConfig(ArchSpec(ds.input_dim, [50]), "gaussian_nll", members=5, epochs=40,
                         learning_rate=0.01, base_seed=k)
    model = train_ensemble(cfg, tr)
    for m in (1, 5):
        scores = evaluate(predict(model.truncated(m), te.features).distribution, te.targets)
        nll[m].append(scores["nll"])
        rmse[m].append(scores["rmse"])

for m in (1, 5):
    print(f"M={m}: NLL {np.mean(nll[m]):.2f} ± {np.std(nll[m]):.2f}   "
          f"RMSE {np.mean(rmse[m]):.2f} ± {np.std(rmse[m]):.2f}")
