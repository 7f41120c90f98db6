"""Experiment configuration: JSON schema, validation, shipped defaults.

Hyperparameter tuples "(white-box, black-box)" become two named variants per
attack. Unknown keys anywhere in the config are rejected with their field
path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from . import attacks as attacks_mod

SCHEMA_VERSION = 1

ATTACK_KINDS = ("fgsm", "vap", "eap", "pgm")
DEFENSE_MODES = ("none", "adversarial-train", "amc-target", "amc-proxy")

# MNIST-scale reference hyperparameters (white-box, black-box variants).
MNIST_ATTACKS = {
    "fgsm": {"whitebox": {"eps": 0.1}, "blackbox": {"eps": 0.1}},
    "eap": {
        "whitebox": {"beta": 1e-2, "binary_steps": 5, "max_iterations": 8,
                     "initial_const": 1e-3, "learning_rate": 1e-1},
        "blackbox": {"beta": 1e-2, "binary_steps": 7, "max_iterations": 15,
                     "initial_const": 1e-3, "learning_rate": 1e-1},
    },
    "pgm": {"whitebox": {"eps": 0.3, "nb_iter": 15},
            "blackbox": {"eps": 0.3, "nb_iter": 20}},
    "vap": {"whitebox": {"xi": 1.0, "num_iters": 6, "eps": 5.0},
            "blackbox": {"xi": 1.0, "num_iters": 10, "eps": 8.0}},
}

# Desk-scale defaults tuned for the 16x16 synthetic glyph task.
DESK_ATTACKS = {
    "fgsm": {"whitebox": {"eps": 0.25}, "blackbox": {"eps": 0.25}},
    "eap": {
        "whitebox": {"beta": 1e-2, "binary_steps": 2, "max_iterations": 10,
                     "initial_const": 1e-1, "learning_rate": 0.05},
        "blackbox": {"beta": 1e-2, "binary_steps": 2, "max_iterations": 10,
                     "initial_const": 1e-1, "learning_rate": 0.05},
    },
    "pgm": {"whitebox": {"eps": 0.25, "nb_iter": 10},
            "blackbox": {"eps": 0.25, "nb_iter": 10}},
    "vap": {"whitebox": {"xi": 0.1, "num_iters": 6, "eps": 3.0},
            "blackbox": {"xi": 0.1, "num_iters": 6, "eps": 3.0}},
}


class ConfigError(ValueError):
    def __init__(self, message, path="config"):
        super().__init__(f"{path}: {message}")
        self.path = path


def _check_keys(d, allowed, path):
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", path)


@dataclass
class ExperimentConfig:
    raw: dict = field(default_factory=dict)

    # populated by validate()
    dataset: dict = field(default_factory=dict)
    split: dict = field(default_factory=dict)
    target_train: dict = field(default_factory=dict)
    proxy_train: dict = field(default_factory=dict)
    attacks: dict = field(default_factory=dict)
    cascade: dict = field(default_factory=dict)
    defense: str = "none"
    adv_attack: str = "fgsm"
    interface: dict = field(default_factory=dict)
    squeeze_bits: int = 4
    seed: int = 0
    output_dir: str = "out"


def default_config() -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "dataset": {"kind": "synthetic", "num_classes": 4, "side": 16,
                    "train_size": 480, "test_size": 400},
        "split": {"validation_fraction": 0.30, "attack_fraction": 0.30},
        "target_train": {"epochs": 12, "learning_rate": 0.1, "batch_size": 32},
        "proxy_train": {"epochs": 10, "learning_rate": 0.1, "batch_size": 32,
                        "pool_size": 480},
        "attacks": json.loads(json.dumps(DESK_ATTACKS)),
        "cascade": {"order": ["fgsm", "vap", "eap", "pgm"],
                    "current_fraction": 0.8, "alpha": 0.5,
                    "epochs": 6, "learning_rate": 0.05, "batch_size": 32},
        "defense": "none",
        "adv_attack": "fgsm",
        "interface": {"kind": "label", "flip_p": 0.1},
        "squeeze_bits": 4,
        "seed": 0,
        "output_dir": "out",
    }


def validate(raw: dict) -> ExperimentConfig:
    """Check every nested invariant before any work; reject unknown keys."""
    base = default_config()
    _check_keys(raw, base, "config")
    merged = {**base, **raw}
    if merged["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported schema_version {merged['schema_version']}",
            "config.schema_version",
        )

    cfg = ExperimentConfig(raw=merged)

    user_ds = merged["dataset"]
    kind = user_ds.get("kind", base["dataset"]["kind"])
    # defaults only apply within the same dataset kind
    ds = ({**base["dataset"], **user_ds} if kind == base["dataset"]["kind"]
          else dict(user_ds))
    if kind == "synthetic":
        _check_keys(ds, ("kind", "num_classes", "side", "train_size",
                         "test_size"), "config.dataset")
        for k in ("num_classes", "side", "train_size", "test_size"):
            if not isinstance(ds[k], int) or ds[k] <= 0:
                raise ConfigError(f"{k} must be a positive integer", f"config.dataset.{k}")
    elif kind == "idx":
        _check_keys(ds, ("kind", "train_images", "train_labels",
                         "test_images", "test_labels", "subset"),
                    "config.dataset")
        for k in ("train_images", "train_labels", "test_images", "test_labels"):
            if k not in ds:
                raise ConfigError(f"missing dataset path {k!r}", f"config.dataset.{k}")
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}", "config.dataset.kind")
    cfg.dataset = ds

    sp = {**base["split"], **merged["split"]}
    _check_keys(sp, ("validation_fraction", "attack_fraction"), "config.split")
    for k, v in sp.items():
        if not (0.0 < v < 1.0):
            raise ConfigError(f"{k} must be in (0,1), got {v}", f"config.split.{k}")
    cfg.split = sp

    for section in ("target_train", "proxy_train"):
        tr = {**base[section], **merged[section]}
        _check_keys(tr, base[section], f"config.{section}")
        for k in ("epochs", "batch_size"):
            if not isinstance(tr[k], int) or tr[k] <= 0:
                raise ConfigError(f"{k} must be a positive integer", f"config.{section}.{k}")
        if tr["learning_rate"] <= 0:
            raise ConfigError("learning_rate must be positive", f"config.{section}.learning_rate")
        setattr(cfg, section, tr)

    at = merged["attacks"]
    _check_keys(at, ATTACK_KINDS, "config.attacks")
    cfg.attacks = {}
    for kind_ in ATTACK_KINDS:
        variants = {**base["attacks"][kind_], **at.get(kind_, {})}
        _check_keys(variants, ("whitebox", "blackbox"), f"config.attacks.{kind_}")
        cfg.attacks[kind_] = {}
        for variant, params in variants.items():
            try:
                cfg.attacks[kind_][variant] = attacks_mod.AttackConfig.from_dict(
                    {"kind": kind_, **params}
                )
            except (TypeError, ValueError) as e:
                raise ConfigError(str(e), f"config.attacks.{kind_}.{variant}") from e

    ca = {**base["cascade"], **merged["cascade"]}
    _check_keys(ca, base["cascade"], "config.cascade")
    if not ca["order"] or any(k not in ATTACK_KINDS for k in ca["order"]):
        raise ConfigError(f"order must be a non-empty subset of {ATTACK_KINDS}",
                          "config.cascade.order")
    if not (0.0 < ca["current_fraction"] <= 1.0):
        raise ConfigError("current_fraction must be in (0,1]",
                          "config.cascade.current_fraction")
    if not (0.0 <= ca["alpha"] <= 1.0):
        raise ConfigError("alpha must be in [0,1]", "config.cascade.alpha")
    cfg.cascade = ca

    if merged["defense"] not in DEFENSE_MODES:
        raise ConfigError(f"defense must be one of {DEFENSE_MODES}", "config.defense")
    cfg.defense = merged["defense"]
    if merged["adv_attack"] not in ATTACK_KINDS:
        raise ConfigError(f"adv_attack must be one of {ATTACK_KINDS}", "config.adv_attack")
    cfg.adv_attack = merged["adv_attack"]

    iface = {**base["interface"], **merged["interface"]}
    _check_keys(iface, ("kind", "flip_p"), "config.interface")
    if iface["kind"] not in ("label", "noisy_label", "prob_vector"):
        raise ConfigError(f"unknown interface kind {iface['kind']!r}", "config.interface.kind")
    if not (0.0 <= iface["flip_p"] < 1.0):
        raise ConfigError("flip_p must be in [0,1)", "config.interface.flip_p")
    cfg.interface = iface

    if not (1 <= merged["squeeze_bits"] <= 8):
        raise ConfigError("squeeze_bits must be in [1,8]", "config.squeeze_bits")
    cfg.squeeze_bits = merged["squeeze_bits"]
    if not isinstance(merged["seed"], int):
        raise ConfigError("seed must be an integer", "config.seed")
    cfg.seed = merged["seed"]
    cfg.output_dir = merged["output_dir"]
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path) as f:
        raw = json.load(f)
    return validate(raw)
