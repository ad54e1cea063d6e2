"""Surrogate-gradient BPTT, softmax cross-entropy and masked momentum SGD."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics
from .dynamics import Tape, network_forward


class TapeError(RuntimeError):
    """Backward called without a fresh forward tape."""


@dataclass(frozen=True)
class SurrogateConfig:
    kind: str = "triangle"
    width: float = 1.0

    def __post_init__(self):
        if self.kind != "triangle":
            raise ValueError(f"unsupported surrogate {self.kind!r}")
        if not self.width > 0:
            raise ValueError("surrogate width must be positive")


@dataclass(frozen=True)
class OptimConfig:
    learning_rate: float = 0.02
    momentum: float = 0.9
    schedule: str = "cosine"
    epochs: int = 30
    batch_size: int = 32

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning rate must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


def surrogate_grad(u, threshold, cfg):
    """Triangle pseudo-derivative of the spike step, peak ``1/width`` at threshold."""
    u = np.asarray(u)
    g = np.maximum(0, 1 - np.abs(u - threshold) / cfg.width) / cfg.width
    return g.astype(u.dtype, copy=False)


def cross_entropy_loss(logits, labels):
    """Mean softmax cross-entropy. Returns ``(loss, dloss/dlogits)``."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    n, k = logits.shape
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError("label out of range")
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsum - z[np.arange(n), labels]))
    prob = np.exp(z - logsum[:, None])
    prob[np.arange(n), labels] -= 1
    return loss, (prob / n).astype(logits.dtype)


def _if_backward(grad_s, node, cfg, surrogate, detach_reset):
    """Reverse-time recursion of one IF layer; returns dL/dI for all t."""
    h, s = node.membranes, node.spikes
    grad_i = np.empty_like(h)
    carry = np.zeros_like(h[0])
    reset = h.dtype.type(cfg.reset)
    for t in range(h.shape[0] - 1, -1, -1):
        gs = grad_s[t]
        if not detach_reset:
            # H_{t+1} depends on S_t through both reset terms
            gs = gs + carry * (reset - h[t])
        gh = gs * surrogate_grad(h[t], cfg.threshold, surrogate) + carry * (1 - s[t])
        grad_i[t] = gh
        carry = gh
    return grad_i


def backward(net, tape, dlogits, surrogate, detach_reset=True):
    """Gradients of the loss w.r.t. every prunable weight tensor.

    Returns a list aligned with ``net.prunable_layers()``. Gradients are taken
    w.r.t. the effective weights ``M * W`` and are *not* masked; the
    optimizer's projection keeps pruned weights at zero.

    With ``detach_reset`` (the training default) the previous spike inside the
    reset terms is treated as a constant, so time gradients flow only through
    ``H_{t-1}``.
    """
    if tape is None or not tape.nodes:
        raise TapeError("no forward tape recorded")
    if tape.version != net.version:
        raise TapeError("tape is stale: weights changed since the forward pass")
    cfg = tape.cfg
    steps = tape.nodes[0].inputs.shape[0]
    grads = {}
    dlogits = np.asarray(dlogits)
    grad_y = None
    for node in reversed(tape.nodes):
        layer = net[node.layer_index]
        x = node.inputs
        n = x.shape[1]
        if layer.kind == "avgpool":
            k = layer.size
            g = grad_y / x.dtype.type(k * k)
            g = np.repeat(np.repeat(g, k, axis=-2), k, axis=-1)
            grad_y = g.reshape(x.shape)
            continue
        if layer.spiking:
            grad_i = _if_backward(grad_y, node, cfg, surrogate, detach_reset)
        else:
            grad_i = np.broadcast_to(dlogits, (steps,) + dlogits.shape).astype(x.dtype)
        w_eff = layer.effective_weights
        if layer.kind == "dense":
            xf = x.reshape(steps * n, -1)
            gf = grad_i.reshape(steps * n, -1)
            grads[node.layer_index] = numerics.matmul(xf.T, gf)
            if node.layer_index > 0:
                grad_y = numerics.matmul(gf, w_eff.T).reshape(x.shape)
        else:
            c_out = w_eff.shape[0]
            xf = x.reshape((steps * n,) + layer.input_shape)
            cols = layer.columns(xf)
            g2 = grad_i.reshape(steps * n, c_out, -1).transpose(1, 0, 2).reshape(c_out, -1)
            grads[node.layer_index] = numerics.matmul(g2, cols.T).reshape(w_eff.shape)
            if node.layer_index > 0:
                gcols = numerics.matmul(w_eff.reshape(c_out, -1).T, g2)
                gx = numerics.col2im(gcols, xf.shape, layer.kernel_size, layer.stride, layer.padding)
                grad_y = gx.reshape(x.shape)
    return [grads[i] for i, _ in net.prunable_layers()]


def learning_rate_at(optim, step, total_steps):
    if optim.schedule == "constant" or total_steps <= 0:
        return optim.learning_rate
    return optim.learning_rate * 0.5 * (1 + math.cos(math.pi * step / total_steps))


def sgd_step(weights, grads, masks, optim, step_index, total_steps=1, velocity=None):
    """Momentum SGD followed by mask re-projection.

    ``velocity`` (list of buffers, updated in place) carries momentum between
    calls; ``None`` means a fresh optimizer. Returns the new weight list.
    """
    lr = learning_rate_at(optim, step_index, total_steps)
    if velocity is None:
        velocity = [np.zeros_like(w) for w in weights]
    out = []
    for w, g, m, v in zip(weights, grads, masks, velocity, strict=True):
        if not (w.shape == g.shape == m.shape == v.shape):
            raise numerics.DimensionError("weights, grads and masks must share shapes")
        v *= w.dtype.type(optim.momentum)
        v += g
        new = w - w.dtype.type(lr) * v
        out.append(numerics.check_finite(m * new, "weights"))
    return out


class SGD:
    """Stateful wrapper around :func:`sgd_step` for a network."""

    def __init__(self, net, optim, total_steps):
        self.optim = optim
        self.total_steps = total_steps
        self.step_index = 0
        self.velocity = [np.zeros_like(w) for w in net.weights()]

    def step(self, net, grads):
        new = sgd_step(
            net.weights(), grads, net.masks(), self.optim, self.step_index, self.total_steps, self.velocity
        )
        for (_, layer), w in zip(net.prunable_layers(), new):
            layer.weights = w
        net.touch()
        self.step_index += 1


def train_epochs(net, dataset, optim, surrogate, rng, cfg, epochs=None, optimizer=None):
    """Run ``epochs`` passes of minibatch BPTT on ``dataset``.

    Returns ``(net, history)`` where history holds one dict per epoch with
    mean training loss and training accuracy (computed on the fly).
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    epochs = optim.epochs if epochs is None else epochs
    n = len(dataset)
    per_epoch = math.ceil(n / optim.batch_size)
    if optimizer is None:
        optimizer = SGD(net, optim, epochs * per_epoch)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for start in range(0, n, optim.batch_size):
            idx = order[start : start + optim.batch_size]
            x = dataset.frames(idx, cfg.timesteps, rng)
            y = dataset.labels[idx]
            tape = Tape()
            logits, _ = network_forward(net, x, cfg, tape=tape)
            loss, dlogits = cross_entropy_loss(logits, y)
            grads = backward(net, tape, dlogits, surrogate)
            optimizer.step(net, grads)
            total_loss += loss * len(idx)
            correct += int(np.sum(predict(logits) == y))
        history.append({"epoch": epoch + 1, "loss": total_loss / n, "accuracy": correct / n})
    return net, history


def predict(logits):
    # argmax picks the lowest class index on ties
    return np.argmax(logits, axis=1)
