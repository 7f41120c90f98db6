"""Adversarial training, the model cascade, and feature-squeezing.

The cascade hardens one model against an ordered attack set: each level
starts from the previous level's parameters and trains on batches whose
adversarial portion mixes the current attack with every earlier one, so the
model keeps remembering old attacks while learning new ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import attacks as attacks_mod
from . import models
from .autodiff import Tape
from .models import ModelState, TrainConfig
from .seeding import derive_seed


@dataclass(frozen=True)
class AdvTrainConfig:
    alpha: float  # weight of the clean-loss term
    train: TrainConfig

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError(f"alpha must be in [0,1], got {self.alpha}")


@dataclass(frozen=True)
class CascadeConfig:
    attack_order: tuple  # ordered AttackConfigs; length E
    adv: AdvTrainConfig  # shared per-level training settings
    current_fraction: float = 0.8

    def __post_init__(self):
        object.__setattr__(self, "attack_order", tuple(self.attack_order))
        if not self.attack_order:
            raise ValueError("cascade needs a non-empty attack order")
        if not (0.0 < self.current_fraction <= 1.0):
            raise ValueError(
                f"current_fraction must be in (0,1], got {self.current_fraction}"
            )

    @property
    def num_levels(self):
        return len(self.attack_order)


@dataclass
class BatchComposition:
    """Adversarial sample counts per attack (index 0 = first attack seen)."""

    counts: list
    clean: int = 0

    @property
    def total(self):
        return sum(self.counts) + self.clean


def compose_batch(level_index: int, m: int, cascade: CascadeConfig) -> BatchComposition:
    """Per-attack counts for one batch of m adversarial samples at a level.

    Level 1 assigns everything to the first attack. Later levels give
    round(current_fraction*m) to the current attack and split the remainder
    equally over earlier attacks, leftover units going to earlier attacks
    first.
    """
    if not (1 <= level_index <= cascade.num_levels):
        raise ValueError(
            f"level index {level_index} outside 1..{cascade.num_levels}"
        )
    if m < 0:
        raise ValueError(f"batch size must be >= 0, got {m}")
    if level_index == 1:
        return BatchComposition(counts=[m])
    cur = round(cascade.current_fraction * m)
    rest = m - cur
    prev = level_index - 1
    base, extra = divmod(rest, prev)
    counts = [base + (1 if j < extra else 0) for j in range(prev)]
    counts.append(cur)
    return BatchComposition(counts=counts)


def quantize(x, bits: int) -> np.ndarray:
    """Reduce inputs in [0,1] to 2**bits evenly spaced levels."""
    if not (1 <= bits <= 8):
        raise ValueError(f"bit depth must be in [1,8], got {bits}")
    x = np.asarray(x, dtype=np.float64)
    if len(x) and (x.min() < 0.0 or x.max() > 1.0):
        raise ValueError("quantize input must lie in [0,1]")
    levels = 2 ** bits - 1
    return np.round(x * levels) / levels


def defended_predict(model: ModelState, x, squeeze: int | None = None) -> np.ndarray:
    """Predict labels, optionally squeezing inputs to `squeeze` bits first."""
    if squeeze is not None:
        x = quantize(x, squeeze)
    return models.predict_label(model, x)


def _craft_groups(crafter, xb, yb, attack_list, comp, seed_parts):
    """Perturb contiguous slices of the batch, one slice per attack."""
    xb_adv = np.empty_like(xb)
    start = 0
    for slot, (attack, count) in enumerate(zip(attack_list, comp.counts)):
        if count == 0:
            continue
        sl = slice(start, start + count)
        batch = attacks_mod.craft(
            crafter, xb[sl], yb[sl], attack,
            seed=derive_seed(*seed_parts, slot),
        )
        xb_adv[sl] = batch.x_adv
        start += count
    return xb_adv


def _train_mixed(model, data, cfg: AdvTrainConfig, attack_list, level_index,
                 cascade: CascadeConfig | None, crafter):
    """Shared SGD loop over the mixed clean/adversarial loss.

    ``crafter`` is None for white-box hardening (adversarial examples are
    regenerated against the current parameters) or a fixed proxy model.
    Returns (model, stats) where stats holds per-epoch losses and per-attack
    sample counts.
    """
    x, y = models._xy(data)
    if len(x) == 0:
        raise ValueError("empty dataset")
    tc = cfg.train
    out = ModelState(model.spec, {k: v.copy() for k, v in model.params.items()},
                     model.rng_seed)
    order_rng = np.random.Generator(np.random.PCG64(tc.seed))
    drop_rng = np.random.Generator(np.random.PCG64(tc.seed ^ 0x5DEECE66D))
    attack_counts = [0] * len(attack_list)
    losses = []
    for epoch in range(tc.epochs):
        order = order_rng.permutation(len(x))
        epoch_loss = 0.0
        nb = 0
        for start in range(0, len(x), tc.batch_size):
            idx = order[start:start + tc.batch_size]
            xb, yb = x[idx], y[idx]
            if cfg.alpha == 1.0:
                # degenerate mix: identical to plain training, bit for bit
                epoch_loss += models._sgd_step(out, xb, yb, tc.learning_rate, drop_rng)
                nb += 1
                continue
            if cascade is None:
                comp = BatchComposition(counts=[len(xb)])
            else:
                comp = compose_batch(level_index, len(xb), cascade)
            for j, cnt in enumerate(comp.counts):
                attack_counts[j] += cnt
            xb_adv = _craft_groups(
                crafter if crafter is not None else out,
                xb, yb, attack_list, comp,
                seed_parts=(tc.seed, "craft", level_index, epoch, start),
            )
            tape = Tape(training=True, rng=drop_rng)
            logits_c, _ = models.forward(out, xb, tape)
            loss_c = tape.cross_entropy(logits_c, yb)
            logits_a, _ = models.forward(out, xb_adv, tape)
            loss_a = tape.cross_entropy(logits_a, yb)
            loss = tape.combine(loss_c, loss_a, cfg.alpha, 1.0 - cfg.alpha)
            tape.backward(loss)
            for name, g in models.param_grads(tape).items():
                out.params[name] -= tc.learning_rate * g
            epoch_loss += float(loss.data)
            nb += 1
        losses.append(epoch_loss / max(nb, 1))
    return out, {"losses": losses, "attack_counts": attack_counts}


def adversarial_train(model: ModelState, attack, data, cfg: AdvTrainConfig,
                      crafter: ModelState | None = None) -> ModelState:
    """Harden against one attack with the mixed clean/adversarial loss.

    Adversarial examples are regenerated per batch against the current
    parameters (white-box, ``crafter=None``) or against a fixed proxy.
    """
    out, _ = _train_mixed(model, data, cfg, [attack], level_index=1,
                          cascade=None, crafter=crafter)
    return out


def amc_train(m0: ModelState, data, cascade: CascadeConfig,
              crafter_for_level=None, checkpoint_dir=None,
              transfer: bool = True):
    """Run the full cascade starting from a trained undefended model.

    ``crafter_for_level(level_index, current_model)`` may supply a proxy
    crafter per level; None means white-box self-crafting. With
    ``transfer=False`` every level restarts from the undefended parameters
    (the ablation variant). Returns (final model, log dict).
    """
    current = m0
    log = {"levels": [], "cumulative_attack_counts": [0] * cascade.num_levels}
    for i in range(1, cascade.num_levels + 1):
        source = current if transfer else m0
        level_model = models.transfer_params(source, source.spec)
        crafter = None
        if crafter_for_level is not None:
            crafter = crafter_for_level(i, current)
        level_model, stats = _train_mixed(
            level_model, data, cascade.adv,
            list(cascade.attack_order[:i]), level_index=i,
            cascade=cascade, crafter=crafter,
        )
        for j, cnt in enumerate(stats["attack_counts"]):
            log["cumulative_attack_counts"][j] += cnt
        log["levels"].append({
            "level": i,
            "attack": cascade.attack_order[i - 1].kind,
            "losses": stats["losses"],
            "attack_counts": stats["attack_counts"],
        })
        if checkpoint_dir is not None:
            models.save(level_model, f"{checkpoint_dir}/cascade_level{i}.amcm")
        current = level_model
    total = log["cumulative_attack_counts"]
    floor = total[-1] if total and total[-1] else 1
    log["realized_ratio"] = [round(t / floor, 4) for t in total]
    return current, log


def amc_train_no_transfer(m0: ModelState, data, cascade: CascadeConfig,
                          crafter_for_level=None, checkpoint_dir=None):
    """Cascade ablation: every level re-initializes to the undefended model."""
    return amc_train(m0, data, cascade, crafter_for_level=crafter_for_level,
                     checkpoint_dir=checkpoint_dir, transfer=False)
