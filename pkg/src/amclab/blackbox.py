"""Adaptive black-box threat model: prediction interfaces, proxies, transfer.

The target is wrapped in an oracle that exposes nothing but query responses;
proxy training and transfer attacks go through the oracle alone, and its
query counter accounts for every target evaluation on the attacker's side.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import attacks as attacks_mod
from . import defenses, models
from .autodiff import _softmax
from .models import ModelState, TrainConfig
from .seeding import derive_seed

INTERFACE_KINDS = ("label", "noisy_label", "prob_vector")


@dataclass(frozen=True)
class PredictionInterface:
    kind: str = "label"
    flip_p: float = 0.1  # used by the noisy_label interface only

    def __post_init__(self):
        if self.kind not in INTERFACE_KINDS:
            raise ValueError(f"unknown interface kind {self.kind!r}")
        if not (0.0 <= self.flip_p < 1.0):
            raise ValueError(f"flip probability must be in [0,1), got {self.flip_p}")


class TargetOracle:
    """The only view of the target an adversary gets: query in, labels out."""

    def __init__(self, target: ModelState, iface: PredictionInterface):
        self._target = target
        self.iface = iface
        self.query_count = 0
        self.num_classes = target.spec.num_classes
        self.input_shape = target.spec.input_shape

    def query(self, x, seed: int = 0):
        """Answer a batch of queries per the configured interface.

        Returns hard labels for the label interfaces and an (n, classes)
        probability array for the prob_vector interface.
        """
        x = np.asarray(x, dtype=np.float64)
        self.query_count += len(x)
        logits = models.predict_logits(self._target, x)
        if self.iface.kind == "prob_vector":
            return _softmax(logits)
        labels = logits.argmax(axis=1)
        if self.iface.kind == "noisy_label" and self.iface.flip_p > 0:
            rng = np.random.Generator(np.random.PCG64(seed))
            flip = rng.random(len(labels)) < self.iface.flip_p
            # flip to a uniformly random *other* class
            offset = rng.integers(1, self.num_classes, size=len(labels))
            labels = np.where(flip, (labels + offset) % self.num_classes, labels)
        return labels


def query(target: ModelState, iface: PredictionInterface, x, seed: int = 0):
    """One-shot interface query (oracle-free convenience wrapper)."""
    return TargetOracle(target, iface).query(x, seed=seed)


@dataclass
class ProxyState:
    model: ModelState
    tag: str  # "P'" hardens the target, "P''" evaluates it
    pool_id: str


@dataclass
class QueryLog:
    count: int


def train_proxy(oracle: TargetOracle, pool, tag: str, cfg: TrainConfig):
    """Fit the substitute: label the unlabeled pool via the oracle, train.

    The prob_vector interface yields soft labels; the proxy then trains on
    full cross-entropy against the returned probability vectors.
    """
    images = pool.images if hasattr(pool, "images") else np.asarray(pool)
    if len(images) == 0:
        raise ValueError("empty proxy pool")
    responses = oracle.query(images, seed=derive_seed(cfg.seed, "labeling"))
    spec = models.proxy_spec(oracle.input_shape, oracle.num_classes)
    proxy = models.build(spec, seed=cfg.seed)
    if oracle.iface.kind == "prob_vector":
        proxy = _train_soft(proxy, images, responses, cfg)
    else:
        proxy = models.train_plain(proxy, (images, responses), cfg)
    pool_id = getattr(pool, "name", "pool")
    return ProxyState(model=proxy, tag=tag, pool_id=pool_id), QueryLog(oracle.query_count)


def _train_soft(model, x, target_probs, cfg: TrainConfig):
    """Mini-batch SGD on soft-label cross-entropy."""
    from .autodiff import Tape

    out = ModelState(model.spec, {k: v.copy() for k, v in model.params.items()},
                     model.rng_seed)
    order_rng = np.random.Generator(np.random.PCG64(cfg.seed))
    drop_rng = np.random.Generator(np.random.PCG64(cfg.seed ^ 0x5DEECE66D))
    for _ in range(cfg.epochs):
        order = order_rng.permutation(len(x))
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            tape = Tape(training=True, rng=drop_rng)
            logits, _ = models.forward(out, x[idx], tape)
            loss = tape.soft_cross_entropy(logits, target_probs[idx])
            tape.backward(loss)
            for name, g in models.param_grads(tape).items():
                out.params[name] -= cfg.learning_rate * g
    return out


def transfer_attack(proxy: ProxyState, attack, x, y, seed: int = 0):
    """Craft white-box adversarial examples on the proxy (for the target)."""
    return attacks_mod.craft(proxy.model, x, y, attack, seed=seed)


def harden_via_proxy(target: ModelState, pool, defense, data,
                     iface: PredictionInterface, proxy_cfg: TrainConfig,
                     checkpoint_dir=None):
    """Adversarially train the target with proxy-crafted perturbations.

    ``defense`` is either (attack, AdvTrainConfig) for single-attack
    hardening or a CascadeConfig for the proxy-crafted cascade. The proxy is
    retrained from scratch against the current target interface once per
    cascade level so it keeps tracking the hardened target.

    Returns (hardened model, info dict with query counts and cascade log).
    """
    info = {"proxy_query_counts": [], "proxy_retrainings": 0}

    if isinstance(defense, defenses.CascadeConfig):
        def crafter_for_level(level, current_target):
            oracle = TargetOracle(current_target, iface)
            proxy, qlog = train_proxy(
                oracle, pool, tag="P'",
                cfg=_reseeded(proxy_cfg, level),
            )
            info["proxy_query_counts"].append(qlog.count)
            info["proxy_retrainings"] += 1
            return proxy.model

        hardened, log = defenses.amc_train(
            target, data, defense,
            crafter_for_level=crafter_for_level,
            checkpoint_dir=checkpoint_dir,
        )
        info["cascade_log"] = log
        return hardened, info

    attack, adv_cfg = defense
    oracle = TargetOracle(target, iface)
    proxy, qlog = train_proxy(oracle, pool, tag="P'", cfg=proxy_cfg)
    info["proxy_query_counts"].append(qlog.count)
    info["proxy_retrainings"] = 1
    hardened = defenses.adversarial_train(
        target, attack, data, adv_cfg, crafter=proxy.model
    )
    return hardened, info


def _reseeded(cfg: TrainConfig, level: int) -> TrainConfig:
    return TrainConfig(
        epochs=cfg.epochs,
        learning_rate=cfg.learning_rate,
        batch_size=cfg.batch_size,
        seed=derive_seed(cfg.seed, "proxy-level", level),
    )
