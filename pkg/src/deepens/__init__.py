"""Deep ensembles of small probabilistic networks and tools to judge their uncertainty."""
from .adversarial import AdversarialConfig, AdversarialMode, compute_eps, fgsm, random_sign_perturb
from .data import (
    UNKNOWN_LABEL,
    DataError,
    Dataset,
    FoldSpec,
    bootstrap_sample,
    class_split,
    gaussian_blobs,
    heteroscedastic,
    load_digits,
    load_csv,
    load_idx,
    make_folds,
    standardize,
    toy_cubic,
)
from .ensemble import (
    CombinedPrediction,
    EnsembleConfig,
    EnsembleModel,
    combine_classification,
    combine_regression,
    disagreement,
    load_model,
    mc_dropout_predict,
    predict,
    predict_mc_dropout,
    save_model,
    train_ensemble,
    train_member,
)
from .evaluation import (
    calibration_curve,
    confidence_accuracy_curve,
    entropy,
    entropy_histogram,
    evaluate,
    mixture_bound_gap,
)
from .nn import ArchSpec, Categorical, Gaussian, Head, NetworkParams, adam_step, backward, forward, init_params
from .scoring import ScoringLoss, brier, cross_entropy, gaussian_nll, mse

__version__ = "0.1.0"

__all__ = [
    "AdversarialConfig",
    "AdversarialMode",
    "ArchSpec",
    "Categorical",
    "CombinedPrediction",
    "DataError",
    "Dataset",
    "EnsembleConfig",
    "EnsembleModel",
    "FoldSpec",
    "Gaussian",
    "Head",
    "NetworkParams",
    "ScoringLoss",
    "UNKNOWN_LABEL",
    "adam_step",
    "backward",
    "bootstrap_sample",
    "brier",
    "calibration_curve",
    "class_split",
    "combine_classification",
    "combine_regression",
    "compute_eps",
    "confidence_accuracy_curve",
    "cross_entropy",
    "disagreement",
    "entropy",
    "entropy_histogram",
    "evaluate",
    "fgsm",
    "forward",
    "gaussian_blobs",
    "gaussian_nll",
    "heteroscedastic",
    "init_params",
    "load_csv",
    "load_digits",
    "load_idx",
    "load_model",
    "make_folds",
    "mc_dropout_predict",
    "mixture_bound_gap",
    "mse",
    "predict",
    "predict_mc_dropout",
    "random_sign_perturb",
    "save_model",
    "standardize",
    "toy_cubic",
    "train_ensemble",
    "train_member",
]
