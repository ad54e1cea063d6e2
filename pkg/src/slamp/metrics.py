"""Accuracy, synaptic-operation counts and membrane variance."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .dynamics import network_forward
from .pruning import connectivity


@dataclass
class EvalResult:
    top1: float
    top5: float
    sops: float
    membrane_variance: float
    connectivity: float
    loss: float | None = None

    def as_dict(self):
        return asdict(self)


def topk_accuracy(logits, labels, k):
    """Fraction of samples whose label ranks among the top ``k`` logits.

    A class outranks the label when its logit is larger, or equal with a
    lower class index.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    n, classes = logits.shape
    if not 1 <= k <= classes:
        raise ValueError("k must lie in [1, n_classes]")
    if np.any(labels < 0) or np.any(labels >= classes):
        raise ValueError("label out of range")
    own = logits[np.arange(n), labels][:, None]
    idx = np.arange(classes)[None, :]
    ahead = (logits > own) | ((logits == own) & (idx < labels[:, None]))
    rank = ahead.sum(axis=1)
    return float(np.mean(rank < k))


def _layer_sops(layer, x):
    """Synaptic operations of one layer summed over time and batch.

    Every nonzero input entry (a spike, or an analog/pooled value) drives each
    surviving outgoing synapse once.
    """
    steps, n = x.shape[:2]
    active = (x != 0).astype(np.float64)
    if layer.kind == "dense":
        fanout = layer.mask.sum(axis=1).astype(np.float64)
        return float(active.reshape(steps * n, -1).sum(axis=0) @ fanout)
    flat = active.reshape((steps * n,) + tuple(layer.input_shape))
    cols = layer.columns(flat)
    per_elem = cols.sum(axis=1)
    fanout = layer.mask.reshape(layer.mask.shape[0], -1).sum(axis=0).astype(np.float64)
    return float(per_elem @ fanout)


def count_sops(net, record):
    """Mean synaptic operations per sample over the record."""
    if len(record.inputs) != len(net):
        raise ValueError("record does not match the network")
    total = 0.0
    for i, layer in net.prunable_layers():
        total += _layer_sops(layer, record.inputs[i])
    return total / record.batch_size


def _membrane_stats(record):
    """``(sum of per-neuron variances, neuron count)`` over IF layers."""
    if record.membranes is None or not any(m is not None for m in record.membranes):
        raise ValueError("record has no membranes")
    total = 0.0
    count = 0
    for h in record.membranes:
        if h is None:
            continue
        if h.shape[0] < 2:
            raise ValueError("membrane variance needs at least two timesteps")
        v = h.astype(np.float64).var(axis=0)
        total += float(v.sum())
        count += v.size
    return total, count


def membrane_variance(record):
    """Population variance of each neuron's potential over time, averaged over
    neurons of every IF layer and over samples."""
    total, count = _membrane_stats(record)
    return total / count


def evaluate(net, dataset, cfg, batch_size=256, rng=None):
    """Full-split evaluation of ``net`` into an :class:`EvalResult`."""
    from .training import cross_entropy_loss

    n = len(dataset)
    top1 = top5 = sops = var_sum = loss = 0.0
    var_count = 0
    k5 = min(5, net.n_classes)
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(start + batch_size, n))
        logits, rec = network_forward(net, dataset.frames(idx, cfg.timesteps, rng), cfg, record=True)
        y = dataset.labels[idx]
        m = len(idx)
        top1 += topk_accuracy(logits, y, 1) * m
        top5 += topk_accuracy(logits, y, k5) * m
        sops += count_sops(net, rec) * m
        loss += cross_entropy_loss(logits, y)[0] * m
        if cfg.timesteps >= 2 and any(h is not None for h in rec.membranes):
            s, c = _membrane_stats(rec)
            var_sum += s
            var_count += c
    return EvalResult(
        top1=top1 / n,
        top5=top5 / n,
        sops=sops / n,
        membrane_variance=var_sum / var_count if var_count else 0.0,
        connectivity=connectivity(net)[0],
        loss=loss / n,
    )
