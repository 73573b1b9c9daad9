"""Command-line entry point: ``deepens train|toy|regress|classify|ood|calibrate``.

Every command reads a JSON config (optional), applies flag overrides on top of
per-command defaults, and writes a ``report.json`` plus CSV tables to ``--out``.
"""
from __future__ import annotations

import argparse
import copy
import json
import re
import sys
from pathlib import Path

import numpy as np

from . import data as dio
from .adversarial import AdversarialConfig
from .ensemble import (
    EnsembleConfig,
    predict,
    predict_mc_dropout,
    save_model,
    train_ensemble,
)
from .evaluation import (
    DEFAULT_TAU_GRID,
    DEFAULT_Z_LEVELS,
    calibration_curve,
    confidence_accuracy_curve,
    entropy,
    entropy_histogram,
    evaluate,
    mixture_bound_gap,
    write_csv,
    write_json,
)
from .nn import ArchSpec, Head
from .scoring import ScoringLoss

COMMANDS = ("train", "toy", "regress", "classify", "ood", "calibrate")

_COMMON = {
    "seed": 0,
    "workers": 1,
    "members": 5,
    "variant": "ml-M",
    "out": "out",
    "model": {"hidden_sizes": [50], "dropout_rate": 0.1, "loss": None},
    "training": {
        "epochs": 40,
        "batch_size": 100,
        "learning_rate": 0.01,
        "eps_fraction": 0.01,
        "data_sampling": "full",
        "clip": False,
    },
    "folds": {"n_folds": 1, "test_fraction": 0.1},
}

DEFAULTS = {
    "train": {"data": {"source": "heteroscedastic", "n": 500}},
    "toy": {
        "data": {"source": "toy", "n": 20, "noise_sd": 3.0, "x_range": [-4.0, 4.0], "n_test": 1000},
        "model": {"hidden_sizes": [100]},
        "training": {"epochs": 1000, "learning_rate": 0.1},
        "grid": {"lo": -6.0, "hi": 6.0, "points": 121},
        "variants": ["ensemble-mse", "ml-1", "ml-1+at", "ml-M"],
    },
    "regress": {
        "data": {"source": "heteroscedastic", "n": 500},
        "folds": {"n_folds": 20, "test_fraction": 0.1},
    },
    "classify": {
        "data": {"source": "digits"},
        "model": {"hidden_sizes": [200, 200, 200]},
        "training": {"epochs": 20, "learning_rate": 0.001},
        # 1797 images: a half split keeps enough test points to resolve small metric gaps
        "folds": {"n_folds": 1, "test_fraction": 0.5},
        "m_grid": [1, 2, 3, 4, 5],
        "variants": ["ml-M", "ml-M+at", "random-sign", "mc-dropout"],
    },
    "ood": {
        "data": {"source": "digits", "known_classes": [0, 1, 2, 3, 4], "unknown": None},
        "model": {"hidden_sizes": [200, 200, 200]},
        "training": {"epochs": 20, "learning_rate": 0.001},
        "folds": {"n_folds": 1, "test_fraction": 0.2},
        "m_grid": [1, 5],
        "variants": ["ml-M", "ml-M+at"],
        "bins": 50,
        "tau_grid": list(DEFAULT_TAU_GRID),
    },
    "calibrate": {
        "data": {"source": "heteroscedastic", "n": 1000, "n_test": 2000},
        "z_levels": list(DEFAULT_Z_LEVELS),
    },
}

_VARIANT_RE = re.compile(r"^(ensemble-mse|ml-(\d+|M)(\+at)?|mc-dropout|random-sign)$")


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(command: str, file_config: dict | None = None, **flags) -> dict:
    cfg = _merge(_COMMON, DEFAULTS[command])
    if file_config:
        cfg = _merge(cfg, file_config)
    for k, v in flags.items():
        if v is not None:
            cfg[k] = v
    cfg["command"] = command
    if command not in ("toy", "classify", "ood"):
        parse_variant(cfg["variant"], cfg["members"])
    return cfg


def derive_seed(seed: int, *keys: int) -> int:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def parse_variant(tag: str, members: int) -> dict:
    """Translate a variant tag into members / loss family / perturbation settings."""
    m = _VARIANT_RE.match(tag)
    if not m:
        raise ConfigError(f"unknown variant {tag!r}")
    if tag == "ensemble-mse":
        return {"members": members, "loss": "mse", "adversarial": "off", "dropout": False}
    if tag == "mc-dropout":
        return {"members": 1, "loss": "ml", "adversarial": "off", "dropout": True, "samples": members}
    if tag == "random-sign":
        return {"members": members, "loss": "ml", "adversarial": "random_sign", "dropout": False}
    count = members if m.group(2) == "M" else int(m.group(2))
    return {"members": count, "loss": "ml", "adversarial": "fgsm" if m.group(3) else "off",
            "dropout": False}


def _ensemble_config(cfg: dict, variant: dict, dataset: dio.Dataset, base_seed: int) -> EnsembleConfig:
    t = cfg["training"]
    mdl = cfg["model"]
    if dataset.task == "classification":
        head, k = Head.SOFTMAX, dataset.n_classes
        ml_loss = mdl.get("loss") or "cross_entropy"
        if variant["loss"] == "mse":
            raise ConfigError("ensemble-mse is a regression variant")
    else:
        head, k = Head.GAUSSIAN, 0
        ml_loss = mdl.get("loss") or "gaussian_nll"
    loss = "mse" if variant["loss"] == "mse" else ml_loss
    if variant["loss"] == "ml" and ScoringLoss(loss) is ScoringLoss.MSE:
        raise ConfigError("variant needs a proper-scoring-rule loss, config asks for mse")
    arch = ArchSpec(
        input_dim=dataset.input_dim,
        hidden_sizes=mdl["hidden_sizes"],
        head=head,
        n_classes=k,
        dropout_rate=mdl["dropout_rate"] if variant["dropout"] else 0.0,
    )
    return EnsembleConfig(
        arch=arch,
        loss=loss,
        members=variant["members"],
        adversarial=AdversarialConfig(variant["adversarial"], t["eps_fraction"], t["clip"]),
        epochs=t["epochs"],
        batch_size=t["batch_size"],
        learning_rate=t["learning_rate"],
        base_seed=base_seed,
        data_sampling=t["data_sampling"],
    )


def load_source(spec: dict, seed: int) -> dio.Dataset:
    src = spec["source"]
    if src == "csv":
        return dio.load_csv(spec["path"], spec.get("target_column", -1), spec.get("task", "regression"),
                            spec.get("n_classes"))
    if src == "idx":
        return dio.load_idx(spec["images"], spec["labels"], spec.get("limit"), spec.get("n_classes", 10))
    if src == "digits":
        return dio.load_digits()
    if src == "blobs":
        return dio.gaussian_blobs(spec.get("n", 1000), spec.get("n_classes", 10), spec.get("dim", 20),
                                  seed=derive_seed(seed, 90))
    if src == "heteroscedastic":
        return dio.heteroscedastic(spec.get("n", 500), seed=derive_seed(seed, 91))
    if src == "toy":
        return dio.toy_cubic(spec.get("n", 20), spec.get("noise_sd", 3.0), tuple(spec.get("x_range", (-4, 4))),
                             seed=derive_seed(seed, 92))
    raise ConfigError(f"unknown data source {src!r}")


def _split(ds: dio.Dataset, cfg: dict):
    f = cfg["folds"]
    return dio.make_folds(ds, dio.FoldSpec(f["n_folds"], f["test_fraction"], derive_seed(cfg["seed"], 93)))


def _public(cfg: dict) -> dict:
    """Config as embedded in reports; output path and pool size never change results."""
    return {k: v for k, v in cfg.items() if k not in ("out", "workers")}


def _fmt(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    mean, sd = float(v.mean()), float(v.std())
    return {"mean": mean, "sd": sd, "formatted": f"{mean:.2f} ± {sd:.2f}"}


def cmd_train(cfg: dict, out: Path) -> dict:
    ds = load_source(cfg["data"], cfg["seed"])
    variant = parse_variant(cfg["variant"], cfg["members"])
    train_idx, test_idx = _split(ds, cfg)[0]
    (tr,), _ = dio.standardize(ds.subset(train_idx))
    ec = _ensemble_config(cfg, variant, tr, derive_seed(cfg["seed"], 0))
    model = train_ensemble(ec, tr, workers=cfg["workers"])
    save_model(model, out / "model.npz")
    te = ds.subset(test_idx)
    pred = predict(model, te.features)
    report = {"config": _public(cfg), "test": evaluate(pred.distribution, te.targets, pred.disagreement),
              "n_train": len(train_idx), "n_test": len(test_idx)}
    write_json(report, out / "report.json")
    return report


def cmd_toy(cfg: dict, out: Path) -> dict:
    ds = load_source(cfg["data"], cfg["seed"])
    (tr,), _ = dio.standardize(ds)
    d = cfg["data"]
    test = dio.toy_cubic(d["n_test"], d["noise_sd"], tuple(d["x_range"]), seed=derive_seed(cfg["seed"], 94))
    g = cfg["grid"]
    grid = np.linspace(g["lo"], g["hi"], g["points"])
    write_csv([{"x": float(x), "y": float(y)} for x, y in zip(ds.features[:, 0], ds.targets)],
              out / "toy_train.csv")
    summary = {}
    inside = (grid >= d["x_range"][0]) & (grid <= d["x_range"][1])
    for tag in cfg["variants"]:
        variant = parse_variant(tag, cfg["members"])
        model = train_ensemble(_ensemble_config(cfg, variant, tr, derive_seed(cfg["seed"], 0)), tr,
                               workers=cfg["workers"])
        dist = predict(model, grid[:, None]).distribution
        write_csv([{"x": float(x), "mean": float(m), "std": float(s), "truth": float(x**3)}
                   for x, m, s in zip(grid, dist.mean, dist.std)],
                  out / f"toy_{tag.replace('+', '_')}.csv")
        edge = dist.std[[0, -1]]
        summary[tag] = {
            "test_nll": evaluate(predict(model, test.features).distribution, test.targets)["nll"],
            "std_at_edges": edge.tolist(),
            "std_at_zero": float(np.interp(0.0, grid, dist.std)),
            "mean_std_in_range": float(dist.std[inside].mean()),
            "edge_to_range_ratio": float(edge.mean() / dist.std[inside].mean()),
        }
    report = {"config": _public(cfg), "variants": summary}
    write_json(report, out / "report.json")
    return report


def cmd_regress(cfg: dict, out: Path) -> dict:
    ds = load_source(cfg["data"], cfg["seed"])
    variant = parse_variant(cfg["variant"], cfg["members"])
    rows = []
    for k, (train_idx, test_idx) in enumerate(_split(ds, cfg)):
        (tr,), _ = dio.standardize(ds.subset(train_idx))
        ec = _ensemble_config(cfg, variant, tr, derive_seed(cfg["seed"], k))
        model = train_ensemble(ec, tr, workers=cfg["workers"])
        te = ds.subset(test_idx)
        if variant.get("samples"):
            dist = predict_mc_dropout(model, te.features, variant["samples"], derive_seed(cfg["seed"], k, 1))
        else:
            dist = predict(model, te.features).distribution
        rows.append({"fold": k, **evaluate(dist, te.targets)})
    write_csv(rows, out / "folds.csv")
    report = {
        "config": _public(cfg),
        "variant": cfg["variant"],
        "n_folds": len(rows),
        "aggregate": {m: _fmt([r[m] for r in rows]) for m in ("nll", "rmse")},
        "folds": rows,
    }
    write_json(report, out / "report.json")
    return report


def _train_grid_models(cfg, tr, tags, seed_key):
    """One model per variant with the largest M; smaller M are prefixes of it."""
    m_max = max(cfg["m_grid"])
    models = {}
    for tag in tags:
        variant = parse_variant(tag, m_max)
        models[tag] = (variant, train_ensemble(_ensemble_config(cfg, variant, tr, derive_seed(cfg["seed"], seed_key)),
                                               tr, workers=cfg["workers"]))
    return models


def _predict_grid(cfg, variant, model, x, m, seed_key):
    if variant.get("samples"):
        return predict_mc_dropout(model, x, m, derive_seed(cfg["seed"], seed_key, m))
    return predict(model.truncated(m), x).distribution


def cmd_classify(cfg: dict, out: Path) -> dict:
    ds = load_source(cfg["data"], cfg["seed"])
    train_idx, test_idx = _split(ds, cfg)[0]
    (tr,), _ = dio.standardize(ds.subset(train_idx))
    te = ds.subset(test_idx)
    rows = []
    for tag, (variant, model) in _train_grid_models(cfg, tr, cfg["variants"], 0).items():
        for m in cfg["m_grid"]:
            if variant.get("samples"):
                dist = _predict_grid(cfg, variant, model, te.features, m, 1)
                extra = {}
            else:
                pred = predict(model.truncated(m), te.features)
                dist = pred.distribution
                members = np.stack([d.probs for d in pred.member_distributions])
                extra = {"mean_disagreement": float(pred.disagreement.mean()),
                         "jensen_gap": mixture_bound_gap(members, te.targets)}
            rows.append({"variant": tag, "M": m, **evaluate(dist, te.targets), **extra})
    write_csv(rows, out / "classify.csv")
    report = {"config": _public(cfg), "rows": rows}
    write_json(report, out / "report.json")
    return report


def cmd_ood(cfg: dict, out: Path) -> dict:
    d = cfg["data"]
    ds = load_source(d, cfg["seed"])
    if d.get("unknown"):
        known, unknown = ds, load_source(d["unknown"], cfg["seed"])
        unknown = dio.Dataset(unknown.features, np.full(len(unknown), dio.UNKNOWN_LABEL),
                              task="classification", n_classes=known.n_classes,
                              provenance=unknown.provenance)
    else:
        known, unknown = dio.class_split(ds, d["known_classes"])
    train_idx, test_idx = _split(known, cfg)[0]
    (tr,), _ = dio.standardize(known.subset(train_idx))
    te = known.subset(test_idx)
    mixed_x = np.vstack([te.features, unknown.features])
    mixed_y = np.concatenate([te.targets, unknown.targets])
    summary = []
    for tag, (variant, model) in _train_grid_models(cfg, tr, cfg["variants"], 0).items():
        safe = tag.replace("+", "_")
        for m in cfg["m_grid"]:
            for name, x in (("known", te.features), ("unknown", unknown.features)):
                probs = _predict_grid(cfg, variant, model, x, m, 1).probs
                hist = entropy_histogram(probs, cfg["bins"])
                write_csv(hist.rows(), out / f"entropy_{safe}_M{m}_{name}.csv")
                summary.append({"variant": tag, "M": m, "set": name, "mean_entropy": float(entropy(probs).mean())})
        probs = _predict_grid(cfg, variant, model, mixed_x, max(cfg["m_grid"]), 1).probs
        curve = confidence_accuracy_curve(probs, mixed_y, cfg["tau_grid"])
        write_csv(curve.rows(), out / f"confidence_{safe}.csv")
    write_csv(summary, out / "entropy_summary.csv")
    report = {"config": _public(cfg), "entropy": summary, "n_known_test": len(te), "n_unknown": len(unknown)}
    write_json(report, out / "report.json")
    return report


def cmd_calibrate(cfg: dict, out: Path) -> dict:
    d = cfg["data"]
    if d["source"] == "heteroscedastic":
        train = dio.heteroscedastic(d["n"], seed=derive_seed(cfg["seed"], 91))
        test = dio.heteroscedastic(d["n_test"], seed=derive_seed(cfg["seed"], 95))
    else:
        ds = load_source(d, cfg["seed"])
        train_idx, test_idx = _split(ds, cfg)[0]
        train, test = ds.subset(train_idx), ds.subset(test_idx)
    (tr,), _ = dio.standardize(train)
    tables = {}
    for column, tag in (("predicted_variance", cfg["variant"]), ("empirical_variance", "ensemble-mse")):
        variant = parse_variant(tag, cfg["members"])
        model = train_ensemble(_ensemble_config(cfg, variant, tr, derive_seed(cfg["seed"], 0)), tr,
                               workers=cfg["workers"])
        tables[column] = calibration_curve(predict(model, test.features).distribution, test.targets,
                                           cfg["z_levels"])
    z = tables["predicted_variance"].nominal
    rows = [{"z": float(z[i]), **{c: float(t.observed[i]) for c, t in tables.items()}} for i in range(len(z))]
    write_csv(rows, out / "calibration.csv")
    report = {"config": _public(cfg), "rows": rows, "n_test": len(test),
              "max_gap": {c: t.max_gap() for c, t in tables.items()}}
    write_json(report, out / "report.json")
    return report


RUNNERS = {
    "train": cmd_train,
    "toy": cmd_toy,
    "regress": cmd_regress,
    "classify": cmd_classify,
    "ood": cmd_ood,
    "calibrate": cmd_calibrate,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deepens", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=str, help="output directory")
    p.add_argument("--workers", type=int, help="process-pool size for member training")
    p.add_argument("--variant", type=str)
    p.add_argument("--members", type=int, help="ensemble size M")
    p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    return p


def run(argv=None) -> dict | None:
    args = build_parser().parse_args(argv)
    file_config = json.loads(args.config.read_text()) if args.config else None
    cfg = resolve_config(args.command, file_config, seed=args.seed, out=args.out, workers=args.workers,
                         variant=args.variant, members=args.members)
    if args.print_config:
        print(json.dumps(cfg, indent=2, sort_keys=True))
        return None
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return RUNNERS[args.command](cfg, out)


def main(argv=None) -> int:
    try:
        run(argv)
    except (ValueError, OSError, RuntimeError, KeyError, ArithmeticError) as exc:
        msg = json.dumps({"error": type(exc).__name__, "message": str(exc)})
        print(msg, file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
