"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np

from . import models
from .autodiff import Tape


def _loss_at(model, x, y):
    tape = Tape(training=False)
    logits, _ = models.forward(model, x, tape)
    loss = tape.cross_entropy(logits, y)
    return float(loss.data), tape, loss


def finite_diff_check(model, x, y, h=1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Sweeps every parameter coordinate and every input coordinate; relative
    error is |analytic - numeric| / max(1, |analytic|). Only feasible for
    models small enough to enumerate.
    """
    if h <= 0:
        raise ValueError(f"finite-difference step must be positive, got {h}")
    x = np.asarray(x, dtype=np.float64)
    _, tape, loss = _loss_at(model, x, y)
    tape.backward(loss)
    analytic = models.param_grads(tape)
    gx = models.input_grad(tape)

    worst = 0.0

    def probe(arr, grad):
        nonlocal worst
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up, _, _ = _loss_at(model, x, y)
            flat[i] = orig - h
            dn, _, _ = _loss_at(model, x, y)
            flat[i] = orig
            numeric = (up - dn) / (2 * h)
            err = abs(gflat[i] - numeric) / max(1.0, abs(gflat[i]))
            worst = max(worst, err)

    for name, grad in analytic.items():
        probe(model.params[name], grad)
    probe(x, gx)
    return worst
