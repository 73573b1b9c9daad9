"""
Entropy on digits the model never saw
=====================================

Train on digits 0-4, then compare predictive entropy on held-out 0-4 against
5-9. A confidence threshold sweep over the mixed set shows how accuracy rises
as unsure predictions are dropped (unseen classes always count as wrong).
"""
import numpy as np

from deepens import (ArchSpec, EnsembleConfig, FoldSpec, class_split, confidence_accuracy_curve,
                     entropy, load_digits, make_folds, predict, standardize, train_ensemble)

known, unknown = class_split(load_digits(), range(5))
tr_idx, te_idx = make_folds(known, FoldSpec(1, 0.2, seed=0))[0]
(tr,), _ = standardize(known.subset(tr_idx))
te = known.subset(te_idx)

cfg = EnsembleConfig(ArchSpec(64, [200, 200, 200], "softmax", 5), "cross_entropy", members=5,
                     epochs=20, learning_rate=0.001)
model = train_ensemble(cfg, tr)

for m in (1, 5):
    sub = model.truncated(m)
    h_known = entropy(predict(sub, te.features).distribution.probs).mean()
    h_unknown = entropy(predict(sub, unknown.features).distribution.probs).mean()
    print(f"M={m}: mean entropy known {h_known:.3f}  unknown {h_unknown:.3f}  (max {np.log(5):.3f})")

x = np.vstack([te.features, unknown.features])
y = np.concatenate([te.targets, unknown.targets])
curve = confidence_accuracy_curve(predict(model, x).distribution.probs, y, np.arange(10) / 10)
print("\n tau  kept  accuracy")
for row in curve.rows():
    print(f"{row['tau']:4.1f} {row['count']:5d}  {row['accuracy']:.3f}")
