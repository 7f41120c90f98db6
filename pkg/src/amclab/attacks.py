"""Adversarial example generators: FGSM, PGM, EAP and VAP.

Each attack is an optimizer over the input space. All outputs are clipped to
[0,1]; FGSM and PGM additionally respect an exact L-infinity budget around
the clean point. Everything is deterministic given (model, x, y, config,
seed).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import container, models
from .autodiff import Tape


@dataclass(frozen=True)
class FgsmConfig:
    eps: float

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError(f"fgsm eps must be >= 0, got {self.eps}")


@dataclass(frozen=True)
class PgmConfig:
    eps: float
    nb_iter: int
    step_size: float | None = None  # default 2.5*eps/nb_iter

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError(f"pgm eps must be >= 0, got {self.eps}")
        if self.nb_iter <= 0:
            raise ValueError(f"pgm nb_iter must be positive, got {self.nb_iter}")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError(f"pgm step_size must be positive, got {self.step_size}")

    @property
    def step(self):
        return self.step_size if self.step_size is not None else 2.5 * self.eps / self.nb_iter


@dataclass(frozen=True)
class EapConfig:
    beta: float = 1e-2
    binary_steps: int = 5
    max_iterations: int = 8
    initial_const: float = 1e-3
    learning_rate: float = 1e-1

    def __post_init__(self):
        for name in ("beta", "max_iterations", "initial_const", "learning_rate"):
            if getattr(self, name) <= 0:
                raise ValueError(f"eap {name} must be positive")
        if self.binary_steps < 1:
            raise ValueError(f"eap binary_steps must be >= 1, got {self.binary_steps}")


@dataclass(frozen=True)
class VapConfig:
    xi: float
    num_iters: int
    eps: float

    def __post_init__(self):
        if self.xi <= 0:
            raise ValueError(f"vap xi must be positive, got {self.xi}")
        if self.num_iters < 1:
            raise ValueError(f"vap num_iters must be >= 1, got {self.num_iters}")
        if self.eps <= 0:
            raise ValueError(f"vap eps must be positive, got {self.eps}")


_KIND_TO_TYPE = {
    "fgsm": FgsmConfig,
    "pgm": PgmConfig,
    "eap": EapConfig,
    "vap": VapConfig,
}


@dataclass(frozen=True)
class AttackConfig:
    """Tagged union: an attack identifier plus exactly one config variant."""

    kind: str
    params: object

    def __post_init__(self):
        expected = _KIND_TO_TYPE.get(self.kind)
        if expected is None:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if not isinstance(self.params, expected):
            raise ValueError(
                f"attack {self.kind!r} needs {expected.__name__}, "
                f"got {type(self.params).__name__}"
            )

    def to_dict(self):
        return {"kind": self.kind, **asdict(self.params)}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        kind = d.pop("kind")
        return cls(kind, _KIND_TO_TYPE[kind](**d))


@dataclass
class AdvBatch:
    x_adv: np.ndarray
    attack: AttackConfig
    seed: int
    success: np.ndarray  # per-sample: model mislabels the adversarial input


def _input_grad_ce(model, x, y):
    tape = Tape(training=False)
    xleaf = tape.leaf(x, name="input")
    logits, _ = models.forward(model, xleaf, tape)
    loss = tape.cross_entropy(logits, y)
    tape.backward(loss)
    return xleaf.grad


def fgsm(model, x, y, cfg: FgsmConfig) -> np.ndarray:
    """One signed-gradient step of size eps, clipped to [0,1]."""
    x = np.asarray(x, dtype=np.float64)
    if cfg.eps == 0 or len(x) == 0:
        return x.copy()
    g = _input_grad_ce(model, x, y)
    return np.clip(x + cfg.eps * np.sign(g), 0.0, 1.0)


def pgm(model, x, y, cfg: PgmConfig) -> np.ndarray:
    """Iterated signed-gradient ascent projected onto the L-inf ball."""
    x0 = np.asarray(x, dtype=np.float64)
    if cfg.eps == 0 or len(x0) == 0:
        return x0.copy()
    lo = np.clip(x0 - cfg.eps, 0.0, 1.0)
    hi = np.clip(x0 + cfg.eps, 0.0, 1.0)
    xa = x0.copy()
    for _ in range(cfg.nb_iter):
        g = _input_grad_ce(model, xa, y)
        xa = np.clip(xa + cfg.step * np.sign(g), lo, hi)
    return xa


def _elastic_distortion(delta, beta):
    axes = tuple(range(1, delta.ndim))
    return (delta ** 2).sum(axis=axes) + beta * np.abs(delta).sum(axis=axes)


def eap(model, x, y, cfg: EapConfig):
    """Elastic-net attack: ISTA on c*hinge + ||d||_2^2 + beta*||d||_1.

    Binary-searches the hinge weight c per sample; returns the successful
    candidate with the lowest elastic-net distortion, or the clean input
    (success flag False) when none is found.
    """
    x0 = np.asarray(x, dtype=np.float64)
    n = len(x0)
    y = np.asarray(y)
    if n == 0:
        return x0.copy(), np.zeros(0, dtype=bool)
    c = np.full(n, cfg.initial_const)
    lower = np.zeros(n)
    upper = np.full(n, np.inf)
    best = x0.copy()
    best_dist = np.full(n, np.inf)
    found = np.zeros(n, dtype=bool)
    for _ in range(cfg.binary_steps):
        xa = x0.copy()
        round_found = np.zeros(n, dtype=bool)
        for _ in range(cfg.max_iterations):
            tape = Tape(training=False)
            leaf = tape.leaf(xa, name="input")
            logits, _ = models.forward(model, leaf, tape)
            loss = tape.hinge_margin(logits, y, c)
            tape.backward(loss)
            grad = leaf.grad + 2.0 * (xa - x0)
            z = xa - cfg.learning_rate * grad
            d = z - x0
            shrunk = np.where(
                np.abs(d) <= cfg.beta, 0.0, d - cfg.beta * np.sign(d)
            )
            xa = np.clip(x0 + shrunk, 0.0, 1.0)
            pred = models.predict_label(model, xa)
            hit = pred != y
            if hit.any():
                dist = _elastic_distortion(xa - x0, cfg.beta)
                improve = hit & (dist < best_dist)
                best[improve] = xa[improve]
                best_dist[improve] = dist[improve]
                round_found |= hit
                found |= hit
        # standard bisection schedule on the hinge weight
        upper = np.where(round_found, np.minimum(upper, c), upper)
        lower = np.where(round_found, lower, np.maximum(lower, c))
        c = np.where(
            np.isinf(upper), c * 10.0, (lower + upper) / 2.0
        )
    return best, found


def _normalize_rows(r):
    axes = tuple(range(1, r.ndim))
    norms = np.sqrt((r ** 2).sum(axis=axes, keepdims=True))
    ok = norms.reshape(len(r)) > 1e-12
    safe = np.where(norms > 1e-12, norms, 1.0)
    return r / safe, ok


def vap(model, x, cfg: VapConfig, seed: int = 0):
    """Virtual adversarial perturbation via KL power iteration.

    No true label is used: the direction maximizing KL between the clean
    prediction and the perturbed prediction is estimated by repeated
    normalized gradient steps, then applied at L2 radius eps and clipped.
    """
    x = np.asarray(x, dtype=np.float64)
    if len(x) == 0:
        return x.copy(), np.zeros(0, dtype=bool)
    p_logits = models.predict_logits(model, x)
    rng = np.random.Generator(np.random.PCG64(seed))
    r, _ = _normalize_rows(rng.standard_normal(x.shape))
    degenerate = np.zeros(len(x), dtype=bool)
    for _ in range(cfg.num_iters):
        tape = Tape(training=False)
        leaf = tape.leaf(x + cfg.xi * r, name="input")
        q_logits, _ = models.forward(model, leaf, tape)
        p_leaf = tape.leaf(p_logits, name="p_logits")
        loss = tape.kl_divergence(p_leaf, q_logits)
        tape.backward(loss)
        new_r, ok = _normalize_rows(leaf.grad)
        degenerate |= ~ok
        r = np.where(ok.reshape((-1,) + (1,) * (x.ndim - 1)), new_r, r)
    return np.clip(x + cfg.eps * r, 0.0, 1.0), degenerate


def craft(model, x, y, attack: AttackConfig, seed: int = 0) -> AdvBatch:
    """Dispatch to the configured attack; output clipped to [0,1]."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if attack.kind == "fgsm":
        xa = fgsm(model, x, y, attack.params)
    elif attack.kind == "pgm":
        xa = pgm(model, x, y, attack.params)
    elif attack.kind == "eap":
        xa, _ = eap(model, x, y, attack.params)
    elif attack.kind == "vap":
        xa, _ = vap(model, x, attack.params, seed=seed)
    else:  # unreachable: AttackConfig validates the kind
        raise ValueError(f"unknown attack kind {attack.kind!r}")
    if len(xa):
        success = models.predict_label(model, xa) != y
    else:
        success = np.zeros(0, dtype=bool)
    return AdvBatch(x_adv=xa, attack=attack, seed=seed, success=success)


def save_adv_batch(batch: AdvBatch, path) -> None:
    container.write(path, {"type": "advbatch"}, {"x_adv": batch.x_adv})
    sidecar = {
        "attack": batch.attack.to_dict(),
        "seed": batch.seed,
        "success": [bool(s) for s in batch.success],
    }
    with open(str(path) + ".json", "w") as f:
        json.dump(sidecar, f, sort_keys=True, indent=2)


def load_adv_batch(path) -> AdvBatch:
    header, tensors = container.read(path)
    if header.get("type") != "advbatch":
        raise container.ContainerError(
            f"not an adversarial batch file: type={header.get('type')!r}", 0
        )
    with open(str(path) + ".json") as f:
        sidecar = json.load(f)
    return AdvBatch(
        x_adv=tensors["x_adv"],
        attack=AttackConfig.from_dict(sidecar["attack"]),
        seed=sidecar["seed"],
        success=np.asarray(sidecar["success"], dtype=bool),
    )
