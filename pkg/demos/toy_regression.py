"""
Uncertainty away from the data on a 1-D cubic
==============================================

Twenty noisy points from y = x^3 + noise on [-4, 4]. We train a five-member
ensemble with the Gaussian likelihood loss and print its predicted standard
deviation on a grid that reaches past the training range.
"""
import numpy as np

from deepens import ArchSpec, EnsembleConfig, predict, standardize, toy_cubic, train_ensemble

raw = toy_cubic(n=20, noise_sd=3.0, seed=0)
(train,), scaling = standardize(raw)
print("training x range:", raw.features.min(), raw.features.max())

# wide single hidden layer, the large step size suits this tiny problem
config = EnsembleConfig(ArchSpec(1, [100]), "gaussian_nll", members=5, epochs=1000, learning_rate=0.1)
model = train_ensemble(config, train)

grid = np.linspace(-6, 6, 13)
pred = predict(model, grid[:, None])
print("\n    x     truth      mean    std")
for x, m, s in zip(grid, pred.distribution.mean, pred.distribution.std):
    print(f"{x:5.1f} {x**3:9.1f} {m:9.1f} {s:6.1f}")

# members agree inside the data and fan out beyond it
spread = np.std([d.mean for d in pred.member_distributions], axis=0)
print("\nspread of member means at x=0:", round(float(spread[6]), 2))
print("spread of member means at x=6:", round(float(spread[-1]), 2))
