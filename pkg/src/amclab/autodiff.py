"""Minimal reverse-mode automatic differentiation over dense float64 tensors.

A forward pass records every primitive operation on a ``Tape``; a single
backward sweep then yields gradients with respect to parameters and inputs.
The primitive set is exactly what the small conv/dense classifiers and the
attack objectives need: matmul, bias add, elementwise activations, 2-D
convolution, 2x2 max pooling, dropout, reshape, fused softmax losses, KL
divergence and an untargeted hinge margin.
"""

from __future__ import annotations

import numpy as np


class ShapeMismatch(ValueError):
    pass


class Node:
    """One value in the recorded computation graph."""

    __slots__ = ("data", "grad", "parents", "backward_fn", "name")

    def __init__(self, data, parents=(), backward_fn=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite values in {what}")


def _softmax(z):
    m = z - z.max(axis=1, keepdims=True)
    e = np.exp(m)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax(z):
    m = z - z.max(axis=1, keepdims=True)
    return m - np.log(np.exp(m).sum(axis=1, keepdims=True))


class Tape:
    """Ordered record of primitive ops; creation order is topological order.

    ``training`` enables dropout; ``rng`` supplies the seeded dropout masks.
    A tape is single-use: one forward build, one backward sweep.
    """

    def __init__(self, training=False, rng=None):
        self.nodes = []
        self.training = training
        self.rng = rng

    def _record(self, node):
        self.nodes.append(node)
        return node

    # ---- leaves ----

    def leaf(self, data, name=None):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, name or "leaf tensor")
        return self._record(Node(arr, name=name))

    # ---- linear algebra ----

    def matmul(self, a, b):
        if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeMismatch(f"matmul shapes {a.shape} and {b.shape}")
        out = Node(a.data @ b.data, (a, b))

        def bwd(g):
            a.accumulate(g @ b.data.T)
            b.accumulate(a.data.T @ g)

        out.backward_fn = bwd
        return self._record(out)

    def add(self, a, b):
        """Elementwise add; b may be a bias broadcast along leading axes."""
        out = Node(a.data + b.data, (a, b))

        def bwd(g):
            a.accumulate(self._unbroadcast(g, a.shape))
            b.accumulate(self._unbroadcast(g, b.shape))

        out.backward_fn = bwd
        return self._record(out)

    @staticmethod
    def _unbroadcast(g, shape):
        while g.ndim > len(shape):
            g = g.sum(axis=0)
        for ax, n in enumerate(shape):
            if n == 1 and g.shape[ax] != 1:
                g = g.sum(axis=ax, keepdims=True)
        return g

    def reshape(self, a, shape):
        out = Node(a.data.reshape(shape), (a,))

        def bwd(g):
            a.accumulate(g.reshape(a.shape))

        out.backward_fn = bwd
        return self._record(out)

    # ---- activations ----

    def relu(self, a):
        mask = a.data > 0
        out = Node(a.data * mask, (a,))
        out.backward_fn = lambda g: a.accumulate(g * mask)
        return self._record(out)

    def tanh(self, a):
        y = np.tanh(a.data)
        out = Node(y, (a,))
        out.backward_fn = lambda g: a.accumulate(g * (1.0 - y * y))
        return self._record(out)

    def sigmoid(self, a):
        y = 1.0 / (1.0 + np.exp(-a.data))
        out = Node(y, (a,))
        out.backward_fn = lambda g: a.accumulate(g * y * (1.0 - y))
        return self._record(out)

    # ---- convolution / pooling / dropout ----

    def conv2d(self, x, w, b):
        """Same-padding stride-1 conv: x (n,c,h,w), w (f,c,kh,kw), b (f,)."""
        n, c, h, wd = x.shape
        f, cw, kh, kw = w.shape
        if cw != c:
            raise ShapeMismatch(f"conv channels: input {c}, kernel {cw}")
        ph, pw = kh // 2, kw // 2
        xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        cols = self._im2col(xp, kh, kw, h, wd)  # (n, h*wd, c*kh*kw)
        wmat = w.data.reshape(f, -1)  # (f, c*kh*kw)
        y = cols @ wmat.T + b.data  # (n, h*wd, f)
        out = Node(y.transpose(0, 2, 1).reshape(n, f, h, wd), (x, w, b))

        def bwd(g):
            gmat = g.reshape(n, f, h * wd).transpose(0, 2, 1)  # (n, h*wd, f)
            b.accumulate(gmat.sum(axis=(0, 1)))
            w.accumulate(
                np.einsum("npf,npk->fk", gmat, cols).reshape(w.shape)
            )
            gcols = gmat @ wmat  # (n, h*wd, c*kh*kw)
            gxp = self._col2im(gcols, xp.shape, kh, kw, h, wd)
            x.accumulate(gxp[:, :, ph:ph + h, pw:pw + wd])

        out.backward_fn = bwd
        return self._record(out)

    @staticmethod
    def _im2col(xp, kh, kw, oh, ow):
        n, c = xp.shape[:2]
        windows = np.lib.stride_tricks.sliding_window_view(
            xp, (kh, kw), axis=(2, 3)
        )[:, :, :oh, :ow]  # (n, c, oh, ow, kh, kw)
        return (
            windows.transpose(0, 2, 3, 1, 4, 5)
            .reshape(n, oh * ow, c * kh * kw)
            .copy()
        )

    @staticmethod
    def _col2im(gcols, xp_shape, kh, kw, oh, ow):
        n, c, hp, wp = xp_shape
        gxp = np.zeros(xp_shape)
        g6 = gcols.reshape(n, oh, ow, c, kh, kw)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + oh, j:j + ow] += g6[:, :, :, :, i, j].transpose(
                    0, 3, 1, 2
                )
        return gxp

    def maxpool2(self, x):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeMismatch(f"maxpool2 needs even spatial dims, got {h}x{w}")
        xr = x.data.reshape(n, c, h // 2, 2, w // 2, 2)
        y = xr.max(axis=(3, 5))
        # mask of (first) maximum within each 2x2 window; ties route the whole
        # gradient to the first max, matching the forward tie-break
        flat = xr.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
        arg = flat.argmax(axis=-1)
        out = Node(y, (x,))

        def bwd(g):
            gflat = np.zeros_like(flat)
            np.put_along_axis(gflat, arg[..., None], g[..., None], axis=-1)
            gx = (
                gflat.reshape(n, c, h // 2, w // 2, 2, 2)
                .transpose(0, 1, 2, 4, 3, 5)
                .reshape(n, c, h, w)
            )
            x.accumulate(gx)

        out.backward_fn = bwd
        return self._record(out)

    def dropout(self, a, rate):
        if not (0.0 <= rate < 1.0):
            raise ValueError(f"dropout rate {rate} outside [0,1)")
        if not self.training or rate == 0.0:
            out = Node(a.data, (a,))
            out.backward_fn = lambda g: a.accumulate(g)
            return self._record(out)
        if self.rng is None:
            raise ValueError("training-mode dropout needs a tape rng")
        keep = (self.rng.random(a.shape) >= rate) / (1.0 - rate)
        out = Node(a.data * keep, (a,))
        out.backward_fn = lambda g: a.accumulate(g * keep)
        return self._record(out)

    # ---- losses ----

    def cross_entropy(self, logits, labels):
        """Mean negative log-softmax probability of the true class."""
        labels = np.asarray(labels)
        n, k = logits.shape
        if labels.shape != (n,):
            raise ShapeMismatch(f"labels shape {labels.shape} for batch {n}")
        if labels.min() < 0 or labels.max() >= k:
            raise ValueError(f"label outside [0,{k}): {labels}")
        logp = _log_softmax(logits.data)
        loss = -logp[np.arange(n), labels].mean()
        out = Node(loss, (logits,))

        def bwd(g):
            d = np.exp(logp)
            d[np.arange(n), labels] -= 1.0
            logits.accumulate(g * d / n)

        out.backward_fn = bwd
        return self._record(out)

    def soft_cross_entropy(self, logits, target_probs):
        """Mean cross-entropy against full probability vectors."""
        t = np.asarray(target_probs, dtype=np.float64)
        if t.shape != logits.shape:
            raise ShapeMismatch(f"targets {t.shape} vs logits {logits.shape}")
        n = logits.shape[0]
        logp = _log_softmax(logits.data)
        out = Node(-(t * logp).sum() / n, (logits,))

        def bwd(g):
            logits.accumulate(g * (np.exp(logp) * t.sum(axis=1, keepdims=True) - t) / n)

        out.backward_fn = bwd
        return self._record(out)

    def log_softmax(self, logits):
        logp = _log_softmax(logits.data)
        out = Node(logp, (logits,))

        def bwd(g):
            p = np.exp(logp)
            logits.accumulate(g - p * g.sum(axis=1, keepdims=True))

        out.backward_fn = bwd
        return self._record(out)

    def kl_divergence(self, p_logits, q_logits):
        """Mean over the batch of KL(softmax(p) || softmax(q))."""
        if p_logits.shape != q_logits.shape:
            raise ShapeMismatch(
                f"KL shapes {p_logits.shape} vs {q_logits.shape}"
            )
        n = p_logits.shape[0]
        logp = _log_softmax(p_logits.data)
        logq = _log_softmax(q_logits.data)
        p = np.exp(logp)
        out = Node((p * (logp - logq)).sum() / n, (p_logits, q_logits))

        def bwd(g):
            q = np.exp(logq)
            rel = logp - logq
            row = (p * rel).sum(axis=1, keepdims=True)
            p_logits.accumulate(g * p * (rel - row) / n)
            q_logits.accumulate(g * (q - p) / n)

        out.backward_fn = bwd
        return self._record(out)

    def hinge_margin(self, logits, labels, weights):
        """Weighted sum of max(z_true - max_other, 0) over the batch.

        The gradient of the active max-other term follows its argmax; this is
        the untargeted attack objective used by the elastic-net attack.
        """
        labels = np.asarray(labels)
        w = np.asarray(weights, dtype=np.float64)
        n, k = logits.shape
        z = logits.data
        true = z[np.arange(n), labels]
        masked = z.copy()
        masked[np.arange(n), labels] = -np.inf
        other_idx = masked.argmax(axis=1)
        margin = true - masked[np.arange(n), other_idx]
        active = margin > 0
        out = Node((w * np.maximum(margin, 0.0)).sum(), (logits,))

        def bwd(g):
            d = np.zeros_like(z)
            rows = np.arange(n)[active]
            d[rows, labels[active]] = w[active]
            d[rows, other_idx[active]] = -w[active]
            logits.accumulate(g * d)

        out.backward_fn = bwd
        return self._record(out)

    def combine(self, a, b, wa, wb):
        """Weighted sum of two scalar losses: wa*a + wb*b."""
        out = Node(wa * a.data + wb * b.data, (a, b))

        def bwd(g):
            a.accumulate(g * wa)
            b.accumulate(g * wb)

        out.backward_fn = bwd
        return self._record(out)

    # ---- backward ----

    def backward(self, loss, loss_grad=1.0):
        """Single reverse sweep from a scalar loss recorded on this tape."""
        if loss.data.shape != ():
            raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        loss.grad = np.asarray(float(loss_grad))
        seen = False
        for node in reversed(self.nodes):
            if node is loss:
                seen = True
            if not seen or node.grad is None or node.backward_fn is None:
                continue
            node.backward_fn(node.grad)
        if not seen:
            raise ValueError("loss was not recorded on this tape")
