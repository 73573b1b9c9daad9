"""Training and combining ensembles of independently trained networks."""
from __future__ import annotations

import hashlib
import io
import json
import zipfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import adversarial as adv
from .data import Dataset, Standardization, bootstrap_sample
from .nn import (
    VARIANCE_FLOOR,
    AdamState,
    ArchSpec,
    Categorical,
    Gaussian,
    Head,
    NetworkParams,
    PredictiveDistribution,
    adam_step,
    backward,
    forward,
    init_params,
    sample_masks,
)
from .scoring import ScoringLoss, gaussian_nll

FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnsembleConfig:
    arch: ArchSpec
    loss: ScoringLoss
    members: int = 5
    adversarial: adv.AdversarialConfig = adv.AdversarialConfig()
    epochs: int = 40
    batch_size: int = 100
    learning_rate: float = 0.1
    base_seed: int = 0
    data_sampling: str = "full"

    def __post_init__(self):
        object.__setattr__(self, "loss", ScoringLoss(self.loss))
        if self.members < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("members, epochs and batch_size must all be >= 1")
        if self.data_sampling not in ("full", "bootstrap"):
            raise ValueError(f"unknown data_sampling {self.data_sampling!r}")
        if self.loss.head != self.arch.head.value:
            raise ValueError(f"loss {self.loss.value!r} does not match a {self.arch.head.value!r} head")

    def to_dict(self) -> dict:
        return {
            "arch": self.arch.to_dict(),
            "loss": self.loss.value,
            "members": self.members,
            "adversarial": {
                "mode": self.adversarial.mode.value,
                "eps_fraction": self.adversarial.eps_fraction,
                "clip": self.adversarial.clip,
            },
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "base_seed": self.base_seed,
            "data_sampling": self.data_sampling,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleConfig":
        d = dict(d)
        d["arch"] = ArchSpec.from_dict(d["arch"])
        d["adversarial"] = adv.AdversarialConfig(**d.get("adversarial", {}))
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def member_seed_sequence(base_seed: int, member_index: int) -> np.random.SeedSequence:
    """Independent stream per member; adding members never changes existing ones."""
    return np.random.SeedSequence(int(base_seed), spawn_key=(int(member_index),))


@dataclass
class TrainingLog:
    epoch_losses: list = field(default_factory=list)
    grad_evals: int = 0


def train_member(config: EnsembleConfig, dataset: Dataset, member_index: int,
                 log: TrainingLog | None = None) -> NetworkParams:
    """Train one network with Adam on shuffled minibatches.

    ``dataset`` is in model units (already standardized if that is wanted). With
    adversarial training on, each minibatch objective is the loss on the clean
    batch plus the loss on its perturbed copy.
    """
    arch = config.arch
    if dataset.input_dim != arch.input_dim:
        raise ValueError(f"dataset has {dataset.input_dim} features, network expects {arch.input_dim}")
    init_ss, data_ss = member_seed_sequence(config.base_seed, member_index).spawn(2)
    init_seed = int(init_ss.generate_state(1, np.uint64)[0])
    rng = np.random.default_rng(data_ss)
    params = init_params(arch, init_seed)
    state = AdamState.for_params(params, learning_rate=config.learning_rate)

    mode = config.adversarial.mode
    eps = None
    bounds = None
    if mode is not adv.AdversarialMode.OFF:
        eps_raw = adv.compute_eps(dataset, config.adversarial.eps_fraction)
        eps = adv.eps_in_model_units(eps_raw, dataset.standardization)
        if config.adversarial.clip:
            lo, hi = dataset.feature_min, dataset.feature_max
            if dataset.standardization is not None:
                lo, hi = dataset.standardization.transform_x(lo), dataset.standardization.transform_x(hi)
            bounds = (lo, hi)

    x_all, y_all = dataset.features, dataset.targets
    pool = np.arange(len(dataset))
    if config.data_sampling == "bootstrap":
        pool = bootstrap_sample(len(dataset), int(rng.integers(2**63)))

    for epoch in range(config.epochs):
        order = rng.permutation(pool)
        total, count = 0.0, 0
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            idx = order[start:start + config.batch_size]
            xb, yb = x_all[idx], y_all[idx]
            masks = sample_masks(arch, len(idx), rng)
            value, grads, gx = backward(params, xb, yb, config.loss, masks=masks)
            n_evals = 1
            if mode is adv.AdversarialMode.FGSM:
                x_adv = xb + eps * np.sign(gx)
                if bounds is not None:
                    x_adv = np.clip(x_adv, *bounds)
            elif mode is adv.AdversarialMode.RANDOM_SIGN:
                x_adv = adv.random_sign_perturb(xb, eps, int(rng.integers(2**63)))
            else:
                x_adv = None
            if x_adv is not None:
                v2, g2, _ = backward(params, x_adv, yb, config.loss, masks=masks)
                value += v2
                grads = [g + h for g, h in zip(grads, g2)]
                n_evals = 2
            if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingError(
                    f"member {member_index}: non-finite loss at epoch {epoch}, batch {b}"
                )
            params = adam_step(params, grads, state)
            total += value * len(idx)
            count += len(idx)
            if log is not None:
                log.grad_evals += n_evals * len(idx)
        if log is not None:
            log.epoch_losses.append(total / count)
    return params


@dataclass(frozen=True)
class EnsembleModel:
    members: tuple[NetworkParams, ...]
    config: EnsembleConfig
    task: str
    standardization: Standardization | None = None
    provenance: str = ""

    @property
    def arch(self) -> ArchSpec:
        return self.config.arch

    def truncated(self, m: int) -> "EnsembleModel":
        """The first ``m`` members, exactly as if trained with ``members=m``."""
        return replace(self, members=self.members[:m], config=replace(self.config, members=m))

    def manifest(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "task": self.task,
            "config": self.config.to_dict(),
            "config_sha256": self.config.digest(),
            "member_seeds": [p.seed for p in self.members],
            "standardization": None if self.standardization is None else self.standardization.to_dict(),
            "provenance": self.provenance,
        }


def _train_member_task(args):
    config, dataset, i = args
    return train_member(config, dataset, i)


def train_ensemble(config: EnsembleConfig, dataset: Dataset, workers: int = 1) -> EnsembleModel:
    """Train ``config.members`` networks independently.

    Members never share state, so ``workers > 1`` (a process pool) gives results
    identical to the sequential run.
    """
    jobs = [(config, dataset, i) for i in range(config.members)]
    if workers > 1 and config.members > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            members = list(ex.map(_train_member_task, jobs))
    else:
        members = [_train_member_task(j) for j in jobs]
    return EnsembleModel(tuple(members), config, dataset.task, dataset.standardization,
                         dataset.provenance)


def combine_classification(member_probs) -> np.ndarray:
    """Uniform mixture of member class probabilities; input shape ``(M, ..., K)``."""
    p = np.asarray(member_probs, dtype=np.float64)
    if p.ndim < 2:
        raise ValueError("need an array of member probability vectors")
    return p.mean(axis=0)


def combine_regression(means, variances) -> Gaussian:
    """Moment-matched Gaussian of a uniform mixture of member Gaussians."""
    mu = np.asarray(means, dtype=np.float64)
    var = np.asarray(variances, dtype=np.float64)
    if mu.shape != var.shape:
        raise ValueError("means and variances are misaligned")
    mean = mu.mean(axis=0)
    # mean of member variances plus variance of member means
    mix_var = var.mean(axis=0) + ((mu - mean) ** 2).mean(axis=0)
    return Gaussian(mean, mix_var)


def combine_empirical(means) -> Gaussian:
    """Point predictions summarized by their mean and empirical variance."""
    mu = np.asarray(means, dtype=np.float64)
    return Gaussian(mu.mean(axis=0), mu.var(axis=0) + VARIANCE_FLOOR)


def mixture_nll(means, variances, y) -> np.ndarray:
    """Exact negative log density of ``y`` under the uniform Gaussian mixture."""
    logp = -gaussian_nll(means, variances, y)
    m = logp.shape[0]
    return -(np.logaddexp.reduce(logp, axis=0) - np.log(m))


def disagreement(member_probs) -> np.ndarray:
    """Sum over members of KL(member || ensemble mean), in nats."""
    p = np.asarray(member_probs, dtype=np.float64)
    pe = p.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(pe)), 0.0)
    return np.maximum(terms.sum(axis=-1), 0.0).sum(axis=0)


@dataclass(frozen=True)
class CombinedPrediction:
    distribution: PredictiveDistribution
    member_distributions: tuple[PredictiveDistribution, ...]
    disagreement: np.ndarray | None = None


def _to_output_units(dist, standardization):
    if isinstance(dist, Gaussian) and standardization is not None:
        s = standardization.y_std
        return Gaussian(dist.mean * s + standardization.y_mean, dist.var * s * s)
    return dist


def predict(model: EnsembleModel, x) -> CombinedPrediction:
    """Ensemble prediction for raw (unstandardized) inputs ``x``.

    Regression outputs are in the original target units. Members trained with
    plain MSE are combined by the mean and empirical variance of their point
    predictions; otherwise the moment-matched mixture is returned.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if model.standardization is not None:
        x = model.standardization.transform_x(x)
    dists = tuple(_to_output_units(forward(p, x), model.standardization) for p in model.members)
    if model.arch.head is Head.SOFTMAX:
        probs = np.stack([d.probs for d in dists])
        return CombinedPrediction(Categorical(combine_classification(probs)), dists, disagreement(probs))
    means = np.stack([d.mean for d in dists])
    if model.config.loss is ScoringLoss.MSE:
        return CombinedPrediction(combine_empirical(means), dists)
    return CombinedPrediction(combine_regression(means, np.stack([d.var for d in dists])), dists)


def mc_dropout_predict(params: NetworkParams, x, samples: int, seed) -> PredictiveDistribution:
    """Average ``samples`` stochastic forward passes with dropout left on.

    Sample masks are drawn in sequence from one generator seeded with ``seed``,
    so ``samples=1`` equals ``forward(params, x, dropout_seed=seed)``.
    """
    if params.arch.dropout_rate == 0.0:
        raise ValueError("MC-dropout needs a network with dropout_rate > 0")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    rng = np.random.default_rng(seed)
    dists = [forward(params, x, masks=sample_masks(params.arch, len(x), rng)) for _ in range(samples)]
    if params.arch.head is Head.SOFTMAX:
        return Categorical(combine_classification([d.probs for d in dists]))
    return combine_regression([d.mean for d in dists], [d.var for d in dists])


def predict_mc_dropout(model: EnsembleModel, x, samples: int, seed, member: int = 0) -> PredictiveDistribution:
    """MC-dropout prediction from one member of ``model`` on raw inputs."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if model.standardization is not None:
        x = model.standardization.transform_x(x)
    return _to_output_units(mc_dropout_predict(model.members[member], x, samples, seed),
                            model.standardization)


def save_model(model: EnsembleModel, path) -> None:
    """Write an ``.npz`` container: member arrays plus a JSON manifest.

    Entries carry a fixed timestamp so identical models give identical bytes.
    """
    arrays = {}
    for m, p in enumerate(model.members):
        for k, a in enumerate(p.arrays()):
            arrays[f"m{m}_p{k}"] = a
    arrays["manifest"] = np.frombuffer(json.dumps(model.manifest(), sort_keys=True).encode(), dtype=np.uint8)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, a in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(a), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())


def load_model(path) -> EnsembleModel:
    with np.load(path, allow_pickle=False) as z:
        manifest = json.loads(z["manifest"].tobytes().decode())
        if manifest.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format {manifest.get('format_version')!r}")
        config = EnsembleConfig.from_dict(manifest["config"])
        n_arrays = 2 * (len(config.arch.hidden_sizes) + 1)
        members = []
        for m, seed in enumerate(manifest["member_seeds"]):
            arrays = [z[f"m{m}_p{k}"] for k in range(n_arrays)]
            members.append(NetworkParams(config.arch, tuple(arrays[0::2]), tuple(arrays[1::2]), int(seed)))
    std = manifest["standardization"]
    return EnsembleModel(tuple(members), config, manifest["task"],
                         None if std is None else Standardization.from_dict(std),
                         manifest.get("provenance", ""))
