import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepens.adversarial import AdversarialConfig
from deepens.data import Dataset, heteroscedastic, standardize, toy_cubic
from deepens.ensemble import (
    EnsembleConfig,
    TrainingError,
    TrainingLog,
    combine_classification,
    combine_empirical,
    combine_regression,
    disagreement,
    load_model,
    mc_dropout_predict,
    mixture_nll,
    predict,
    predict_mc_dropout,
    save_model,
    train_ensemble,
    train_member,
)
from deepens.evaluation import evaluate
from deepens.nn import ArchSpec, NetworkParams, forward, init_params
from deepens.scoring import cross_entropy


@pytest.fixture(scope="module")
def toy():
    (tr,), _ = standardize(toy_cubic(seed=0))
    return tr


def small_config(**kw):
    base = dict(arch=ArchSpec(1, [20]), loss="gaussian_nll", members=3, epochs=30, learning_rate=0.05)
    base.update(kw)
    return EnsembleConfig(**base)


def test_combine_classification_examples():
    np.testing.assert_allclose(combine_classification([[[1, 0]], [[0, 1]]]), [[0.5, 0.5]])
    p = np.array([[[0.3, 0.7]]])
    np.testing.assert_array_equal(combine_classification(p), p[0])
    three = [[[0.6, 0.4]], [[0.5, 0.5]], [[0.4, 0.6]]]
    np.testing.assert_allclose(combine_classification(three), [[0.5, 0.5]], atol=1e-15)
    with pytest.raises(ValueError):
        combine_classification([0.5, 0.5])


def test_combine_regression_examples():
    g = combine_regression([[0.0], [2.0]], [[1.0], [1.0]])
    assert g.mean[0] == 1.0 and g.var[0] == 2.0
    same = combine_regression([[3.0], [3.0], [3.0]], [[0.5], [0.5], [0.5]])
    assert same.mean[0] == 3.0 and same.var[0] == pytest.approx(0.5, abs=1e-15)
    # agrees with the textbook E[var + mean^2] - mean^2 form
    rng = np.random.default_rng(0)
    mu, var = rng.normal(size=(4, 6)), rng.uniform(0.1, 2, (4, 6))
    g = combine_regression(mu, var)
    np.testing.assert_allclose(g.var, (var + mu**2).mean(axis=0) - mu.mean(axis=0) ** 2, rtol=1e-12)
    assert np.all(g.var >= var.mean(axis=0) + mu.var(axis=0) - 1e-12)


def test_combine_regression_matches_monte_carlo():
    rng = np.random.default_rng(5)
    mu = rng.normal(0, 2, 4)
    var = rng.uniform(0.2, 3, 4)
    n = 1_000_000
    comp = rng.integers(0, 4, n)
    draws = mu[comp] + np.sqrt(var[comp]) * rng.standard_normal(n)
    g = combine_regression(mu[:, None], var[:, None])
    assert g.mean[0] == pytest.approx(draws.mean(), abs=0.01 * np.sqrt(g.var[0]))
    assert g.var[0] == pytest.approx(draws.var(), rel=0.01)


@settings(max_examples=25)
@given(st.integers(0, 2**31), st.integers(1, 6))
def test_combination_is_permutation_invariant(seed, m):
    rng = np.random.default_rng(seed)
    mu, var = rng.normal(size=(m, 3)), rng.uniform(0.1, 2, (m, 3))
    probs = rng.dirichlet(np.ones(4), size=(m, 3))
    perm = rng.permutation(m)
    a, b = combine_regression(mu, var), combine_regression(mu[perm], var[perm])
    np.testing.assert_allclose(a.mean, b.mean, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(a.var, b.var, rtol=1e-12)
    np.testing.assert_allclose(combine_classification(probs), combine_classification(probs[perm]), atol=1e-15)
    np.testing.assert_allclose(disagreement(probs), disagreement(probs[perm]), rtol=1e-10, atol=1e-15)


def test_disagreement_examples():
    assert disagreement([[[0.2, 0.8]], [[0.2, 0.8]]])[0] == 0.0
    assert disagreement([[[1.0, 0.0]], [[0.0, 1.0]]])[0] == pytest.approx(2 * np.log(2), abs=1e-12)
    rng = np.random.default_rng(1)
    d = disagreement(rng.dirichlet(np.ones(5), size=(4, 50)))
    assert np.all(d > 0)


def test_empirical_variance_combination():
    g = combine_empirical([[1.0], [3.0]])
    assert g.mean[0] == 2.0 and g.var[0] == pytest.approx(1.0 + 1e-6)


def test_mixture_nll_exact():
    mu, var = np.array([[0.0], [2.0]]), np.array([[1.0], [0.5]])
    y = np.array([0.7])
    dens = 0.5 * sum(np.exp(-(y - m) ** 2 / (2 * v)) / np.sqrt(2 * np.pi * v) for m, v in zip(mu, var))
    np.testing.assert_allclose(mixture_nll(mu, var, y), -np.log(dens), rtol=1e-12)


def test_train_member_reduces_loss(toy):
    log = TrainingLog()
    train_member(small_config(members=1, epochs=200), toy, 0, log)
    assert log.epoch_losses[-1] < log.epoch_losses[0]


def test_train_member_deterministic_and_seed_separated(toy):
    cfg = small_config()
    a, b = train_member(cfg, toy, 0), train_member(cfg, toy, 0)
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))
    c = train_member(cfg, toy, 1)
    assert any(not np.array_equal(x, y) for x, y in zip(a.arrays(), c.arrays()))


def test_adversarial_training_doubles_gradient_evaluations(toy):
    plain, at = TrainingLog(), TrainingLog()
    train_member(small_config(epochs=3), toy, 0, plain)
    train_member(small_config(epochs=3, adversarial=AdversarialConfig("fgsm")), toy, 0, at)
    assert plain.grad_evals == 3 * len(toy)
    assert at.grad_evals == 2 * plain.grad_evals


def test_members_independent_of_ensemble_loop(toy):
    cfg = small_config(members=3)
    model = train_ensemble(cfg, toy)
    alone = train_member(cfg, toy, 2)
    assert all(np.array_equal(x, y) for x, y in zip(model.members[2].arrays(), alone.arrays()))
    bigger = train_ensemble(small_config(members=4), toy)
    assert all(np.array_equal(x, y) for x, y in zip(model.members[0].arrays(), bigger.members[0].arrays()))


def test_worker_pool_matches_sequential(toy):
    cfg = small_config(members=3, adversarial=AdversarialConfig("fgsm"))
    seq = train_ensemble(cfg, toy, workers=1)
    par = train_ensemble(cfg, toy, workers=2)
    for a, b in zip(seq.members, par.members):
        assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))


def test_bootstrap_sampling_mode(toy):
    full = train_member(small_config(), toy, 0)
    boot = train_member(small_config(data_sampling="bootstrap"), toy, 0)
    assert any(not np.array_equal(x, y) for x, y in zip(full.arrays(), boot.arrays()))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_loss_reports_context(toy):
    cfg = small_config(members=1, learning_rate=1e300, epochs=5)
    with pytest.raises(TrainingError, match="epoch"):
        train_member(cfg, toy, 0)


def test_config_validation():
    with pytest.raises(ValueError):
        EnsembleConfig(ArchSpec(1, [2]), "cross_entropy")
    with pytest.raises(ValueError):
        EnsembleConfig(ArchSpec(1, [2]), "mse", members=0)


def test_predict_regression_in_target_units():
    raw = heteroscedastic(300, seed=2)
    (tr,), params = standardize(raw)
    model = train_ensemble(small_config(members=2, epochs=20), tr)
    pred = predict(model, raw.features[:5])
    inner = [forward(p, params.transform_x(raw.features[:5])) for p in model.members]
    np.testing.assert_allclose(pred.member_distributions[0].mean, inner[0].mean * params.y_std + params.y_mean)
    np.testing.assert_allclose(pred.member_distributions[1].var, inner[1].var * params.y_std**2)
    assert pred.disagreement is None


def test_classification_ensemble_beats_mean_member_nll():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((300, 4))
    y = (x[:, 0] + x[:, 1] > 0).astype(int) + (x[:, 2] > 1).astype(int)
    ds = Dataset(x, y, task="classification", n_classes=3)
    cfg = EnsembleConfig(ArchSpec(4, [16], "softmax", 3), "cross_entropy", members=4, epochs=20,
                         learning_rate=0.01)
    model = train_ensemble(cfg, ds)
    pred = predict(model, x)
    ens = evaluate(pred.distribution, y)["nll"]
    members = np.mean([cross_entropy(d.probs, y).mean() for d in pred.member_distributions])
    assert ens <= members + 1e-9
    np.testing.assert_allclose(pred.distribution.probs.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(pred.disagreement >= 0)


def test_mc_dropout_single_sample_is_train_forward():
    p = init_params(ArchSpec(3, [8], "softmax", 4, dropout_rate=0.1), 0)
    x = np.random.default_rng(0).standard_normal((5, 3))
    np.testing.assert_array_equal(mc_dropout_predict(p, x, 1, 9).probs, forward(p, x, dropout_seed=9).probs)
    a, b = mc_dropout_predict(p, x, 7, 3), mc_dropout_predict(p, x, 7, 3)
    np.testing.assert_array_equal(a.probs, b.probs)


def test_mc_dropout_converges_on_linear_regime():
    # positive inputs through an identity layer keep units active, so the mean
    # output is linear in the masks and its expectation is the eval-mode output
    d = 3
    rng = np.random.default_rng(4)
    w2 = rng.standard_normal((d, 2))
    p = NetworkParams(ArchSpec(d, [d], dropout_rate=0.2), (np.eye(d), w2), (np.zeros(d), np.zeros(2)))
    x = np.array([[1.0, 2.0, 0.5]])
    s = 20_000
    draws = np.array([forward(p, x, dropout_seed=k).mean[0] for k in range(2000)])
    mc = mc_dropout_predict(p, x, s, 1)
    tol = 4 * draws.std() / np.sqrt(s)
    assert abs(mc.mean[0] - forward(p, x).mean[0]) < tol


def test_mc_dropout_requires_dropout():
    with pytest.raises(ValueError):
        mc_dropout_predict(init_params(ArchSpec(2, [3]), 0), np.zeros((1, 2)), 3, 0)


def test_predict_mc_dropout_regression_units():
    raw = heteroscedastic(200, seed=3)
    (tr,), params = standardize(raw)
    model = train_ensemble(small_config(arch=ArchSpec(1, [16], dropout_rate=0.1), members=1, epochs=5), tr)
    out = predict_mc_dropout(model, raw.features[:4], 5, 0)
    inner = mc_dropout_predict(model.members[0], params.transform_x(raw.features[:4]), 5, 0)
    np.testing.assert_allclose(out.mean, inner.mean * params.y_std + params.y_mean)


def test_save_load_round_trip(tmp_path, toy):
    model = train_ensemble(small_config(members=2, epochs=5), toy)
    save_model(model, tmp_path / "a.npz")
    save_model(model, tmp_path / "b.npz")
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()
    back = load_model(tmp_path / "a.npz")
    assert back.config == model.config
    assert back.task == model.task
    for a, b in zip(model.members, back.members):
        assert a.seed == b.seed
        for x, y in zip(a.arrays(), b.arrays()):
            assert x.dtype == y.dtype and x.tobytes() == y.tobytes()
    np.testing.assert_array_equal(back.standardization.x_std, model.standardization.x_std)
    assert back.standardization.y_mean == model.standardization.y_mean
