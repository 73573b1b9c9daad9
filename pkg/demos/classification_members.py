"""
How scores move as members are added
====================================

Handwritten 8x8 digits (needs scikit-learn). One ensemble of five is trained;
its first M members give the M-member scores. An MC-dropout network with the
same layer sizes is shown for comparison, with as many passes as members.
"""
from deepens import (ArchSpec, EnsembleConfig, FoldSpec, evaluate, load_digits, make_folds, predict,
                     predict_mc_dropout, standardize, train_ensemble)

ds = load_digits()
tr_idx, te_idx = make_folds(ds, FoldSpec(1, 0.5, seed=0))[0]
(tr,), _ = standardize(ds.subset(tr_idx))
te = ds.subset(te_idx)

arch = ArchSpec(64, [200, 200, 200], "softmax", 10)
ensemble = train_ensemble(EnsembleConfig(arch, "cross_entropy", members=5, epochs=20, learning_rate=0.001), tr)
dropout_arch = ArchSpec(64, [200, 200, 200], "softmax", 10, dropout_rate=0.1)
dropout_net = train_ensemble(EnsembleConfig(dropout_arch, "cross_entropy", members=1, epochs=20,
                                            learning_rate=0.001), tr)

print(" M   ens NLL  ens Brier   drop NLL  drop Brier")
for m in range(1, 6):
    e = evaluate(predict(ensemble.truncated(m), te.features).distribution, te.targets)
    d = evaluate(predict_mc_dropout(dropout_net, te.features, m, seed=0), te.targets)
    print(f"{m:2d}   {e['nll']:.4f}   {e['brier']:.5f}    {d['nll']:.4f}   {d['brier']:.5f}")
