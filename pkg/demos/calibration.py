"""
Do the predicted intervals cover what they claim?
=================================================

Targets have noise that grows with |x|. A likelihood-trained ensemble states
its own variance; an MSE ensemble can only offer the spread of its members.
For each nominal level z we count how often the central z-interval holds the
target.
"""
from deepens import (ArchSpec, EnsembleConfig, calibration_curve, heteroscedastic, predict,
                     standardize, train_ensemble)

(train,), _ = standardize(heteroscedastic(1000, seed=1))
test = heteroscedastic(2000, seed=2)

tables = {}
for loss in ("gaussian_nll", "mse"):
    cfg = EnsembleConfig(ArchSpec(1, [50]), loss, members=5, epochs=40, learning_rate=0.01)
    tables[loss] = calibration_curve(predict(train_ensemble(cfg, train), test.features).distribution,
                                     test.targets)

print("   z   likelihood    mse")
for z, a, b in zip(tables["gaussian_nll"].nominal, tables["gaussian_nll"].observed, tables["mse"].observed):
    print(f"{z:4.1f}   {a:8.3f}   {b:6.3f}")
print("largest gap:", {k: round(t.max_gap(), 3) for k, t in tables.items()})
