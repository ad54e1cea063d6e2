"""Temporal importance scoring and global magnitude pruning.

For a prunable layer with effective weights ``W`` (in x out) and layer inputs
``S_t`` the temporal score of synapse (in, out) is

    R[in, out] = lam * sum_t (W[in, out] * S_t[in]) ** 2
               = lam * W[in, out] ** 2 * sum_t S_t[in] ** 2

with ``lam`` chosen so that every layer's scores sum to one. For binary
spikes ``S ** 2 == S`` and the activity factor is simply the spike count.
With a single timestep and every input active this is plain squared
magnitude (LAMP). Scores are ranked across all layers and the lowest ones are
cut.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class ImportanceMap:
    """Per-layer normalized scores (same shapes as the weight tensors)."""

    scores: list
    normalizers: list
    activity: list
    layer_indices: list = field(default_factory=list)
    kind: str = "slamp"

    def __len__(self):
        return len(self.scores)


@dataclass
class PruneDecision:
    fraction: float
    masks: list
    thresholds: list
    removed_mass: list
    removed_counts: list
    layer_connectivity: list
    connectivity: float

    @property
    def removed(self):
        return sum(self.removed_counts)


# ---------------------------------------------------------------------------
# scores
# ---------------------------------------------------------------------------


def layer_activity(layer, x):
    """Accumulated squared input per weight, averaged over samples.

    ``x`` is the layer input (T, N, *input_shape). Dense layers get one value
    per input unit (broadcast over outputs); for conv kernels each element
    sums over every spatial position it touches.
    """
    steps, n = x.shape[:2]
    x = x.astype(np.float64)
    if layer.kind == "dense":
        xf = x.reshape(steps, n, -1)
        return (xf * xf).sum(axis=0).sum(axis=0) / n
    flat = x.reshape((steps * n,) + tuple(layer.input_shape))
    cols = layer.columns(flat)
    per_elem = (cols * cols).sum(axis=1) / n
    return per_elem.reshape(layer.weights.shape[1:])


def activity_from_record(net, record):
    if len(record.inputs) != len(net):
        raise ValueError("record does not match the network's layers")
    return [layer_activity(layer, record.inputs[i]) for i, layer in net.prunable_layers()]


def _normalize(raw, mask):
    total = raw.sum()
    if total > 0:
        return raw / total, 1.0 / total
    # nothing to rank by: spread evenly over surviving weights
    alive = mask.sum()
    if alive == 0:
        return np.zeros_like(raw), 0.0
    return mask.astype(np.float64) / alive, 1.0 / alive


def _broadcast_activity(layer, act):
    if layer.kind == "dense":
        return act[:, None]
    return act[None]


def _squared(layer):
    w = layer.effective_weights.astype(np.float64)
    return w * w


def slamp_scores(net, record=None, activity=None):
    """Temporal importance scores from a spike record or precomputed activity.

    A layer whose inputs never fired falls back to squared-magnitude scores.
    """
    if activity is None:
        if record is None:
            raise ValueError("need a spike record or activity")
        activity = activity_from_record(net, record)
    layers = net.prunable_layers()
    if len(activity) != len(layers):
        raise ValueError("activity does not match the network's prunable layers")
    scores, lams = [], []
    for (_, layer), act in zip(layers, activity):
        w2 = _squared(layer)
        if np.sum(act) > 0:
            raw = w2 * _broadcast_activity(layer, act)
        else:
            raw = w2
        r, lam = _normalize(raw, layer.mask)
        scores.append(r)
        lams.append(lam)
    return ImportanceMap(scores, lams, list(activity), [i for i, _ in layers], "slamp")


def lamp_scores(net):
    """Squared-magnitude scores with the same per-layer normalization."""
    scores, lams, acts = [], [], []
    for _, layer in net.prunable_layers():
        r, lam = _normalize(_squared(layer), layer.mask)
        scores.append(r)
        lams.append(lam)
        acts.append(None)
    return ImportanceMap(scores, lams, acts, [i for i, _ in net.prunable_layers()], "lamp")


def collect_activity(net, dataset, cfg, batch_size=256, rng=None):
    """Average per-weight activity over one pass of ``dataset``."""
    from .dynamics import network_forward

    totals = None
    n = len(dataset)
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(start + batch_size, n))
        _, rec = network_forward(net, dataset.frames(idx, cfg.timesteps, rng), cfg, record=True)
        batch = activity_from_record(net, rec)
        weight = len(idx) / n
        if totals is None:
            totals = [a * weight for a in batch]
        else:
            totals = [t + a * weight for t, a in zip(totals, batch)]
    return totals


def compute_scores(net, kind, dataset=None, cfg=None, batch_size=256, rng=None):
    if kind == "lamp":
        return lamp_scores(net)
    if kind == "slamp":
        return slamp_scores(net, activity=collect_activity(net, dataset, cfg, batch_size, rng))
    raise ValueError(f"unknown scorer {kind!r}")


# ---------------------------------------------------------------------------
# allocation
# ---------------------------------------------------------------------------


def removal_order(imap, masks):
    """Global ascending ranking of prunable (unmasked, non-guard) weights.

    Returns ``(layers, flat_indices, scores, guards)`` where the first three
    are parallel arrays in removal order and ``guards`` holds the protected
    flat index of each layer (its highest-scoring surviving weight; the
    lowest flat index wins a tie). Ties are broken by (layer, flat index).
    """
    if len(imap) == 0:
        raise ValueError("empty importance map")
    if len(masks) != len(imap):
        raise ValueError("masks do not match importance map")
    lay, flat, sc, guards = [], [], [], []
    for li, (r, m) in enumerate(zip(imap.scores, masks)):
        if r.shape != m.shape:
            raise ValueError("score and mask shapes differ")
        alive = np.flatnonzero(m.reshape(-1))
        rs = r.reshape(-1)[alive]
        if len(alive) == 0:
            guards.append(None)
            continue
        top = alive[int(np.argmax(rs))]
        guards.append(int(top))
        keep = alive != top
        flat.append(alive[keep])
        sc.append(rs[keep])
        lay.append(np.full(int(keep.sum()), li, dtype=np.int64))
    if not flat:
        empty = np.array([], dtype=np.int64)
        return empty, empty, np.array([]), guards
    lay = np.concatenate(lay)
    flat = np.concatenate(flat)
    sc = np.concatenate(sc)
    order = np.lexsort((flat, lay, sc))
    return lay[order], flat[order], sc[order], guards


def removal_count(fraction, unmasked):
    # the epsilon absorbs float error when fraction was derived from a count
    return int(math.floor(fraction * unmasked + 1e-6))


def allocate_and_mask(imap, masks, fraction):
    """Cut the lowest ``floor(fraction * unmasked)`` weights across all layers.

    Each layer keeps at least its single best weight. Returns a
    :class:`PruneDecision` whose masks already include previous zeros.
    """
    if not 0 < fraction <= 1:
        raise ValueError("pruning fraction must lie in (0, 1]")
    lay, flat, sc, _ = removal_order(imap, masks)
    unmasked = int(sum(int(m.sum()) for m in masks))
    k = min(removal_count(fraction, unmasked), len(lay))
    new_masks = [m.copy() for m in masks]
    removed_mass = [0.0] * len(masks)
    removed_counts = [0] * len(masks)
    for li, fi, s in zip(lay[:k], flat[:k], sc[:k]):
        new_masks[li].reshape(-1)[fi] = 0
        removed_mass[li] += float(s)
        removed_counts[li] += 1
    thresholds = []
    layer_conn = []
    for r, m in zip(imap.scores, new_masks):
        alive = m.reshape(-1) > 0
        thresholds.append(float(r.reshape(-1)[alive].min()) if alive.any() else math.inf)
        layer_conn.append(float(alive.mean()))
    total = sum(m.size for m in new_masks)
    kept = sum(int(m.sum()) for m in new_masks)
    return PruneDecision(
        fraction, new_masks, thresholds, removed_mass, removed_counts, layer_conn, kept / total
    )


def apply_prune(net, decision):
    """Install the decision's masks (AND with the current ones) and zero weights."""
    layers = net.prunable_layers()
    if len(decision.masks) != len(layers):
        raise ValueError("decision does not match the network")
    for (_, layer), m in zip(layers, decision.masks):
        if m.shape != layer.mask.shape:
            raise ValueError("mask shape mismatch")
        layer.mask = (layer.mask * m).astype(layer.weights.dtype)
        layer.weights = layer.mask * layer.weights
    net.touch()
    return net


def connectivity(net):
    """``(global fraction, per-layer fractions, surviving parameter count)``."""
    masks = net.masks()
    kept = [int(m.sum()) for m in masks]
    total = sum(m.size for m in masks)
    return sum(kept) / total, [k / m.size for k, m in zip(kept, masks)], sum(kept)


# ---------------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Stage:
    """Either a repeated fractional cut (``fraction`` until ``until``
    connectivity, clipped so the last cut lands on ``until``) or a single
    cut to an absolute ``target`` connectivity."""

    fraction: float | None = None
    until: float | None = None
    target: float | None = None

    def __post_init__(self):
        if (self.fraction is None) == (self.target is None):
            raise ValueError("a stage needs exactly one of fraction or target")
        if self.fraction is not None and not 0 < self.fraction <= 1:
            raise ValueError("stage fraction must lie in (0, 1]")
        for v in (self.until, self.target):
            if v is not None and not 0 < v <= 1:
                raise ValueError("connectivity targets must lie in (0, 1]")


@dataclass(frozen=True)
class PruneSchedule:
    """Prune every ``frequency`` epochs following ``stages`` in order."""

    frequency: int = 15
    stages: tuple = (Stage(fraction=0.15, until=0.10), Stage(target=0.02), Stage(target=0.004))

    def __post_init__(self):
        if self.frequency < 0:
            raise ValueError("frequency must be non-negative")
        last = 1.0
        for st in self.stages:
            floor = st.until if st.fraction is not None else st.target
            if floor is not None:
                if floor > last:
                    raise ValueError("schedule stages must be ordered by decreasing connectivity")
                last = floor

    def targets(self, max_steps=10_000):
        """Connectivity after each pruning step, as fractions of all weights."""
        out = []
        c = 1.0
        for st in self.stages:
            if st.target is not None:
                c = st.target
                out.append(c)
                continue
            floor = st.until if st.until is not None else 0.0
            if st.until is None:
                c = c * (1 - st.fraction)
                out.append(c)
                continue
            while c > floor and len(out) < max_steps:
                nxt = c * (1 - st.fraction)
                c = max(nxt, floor)
                # snap float drift onto the floor
                if math.isclose(c, floor, rel_tol=1e-12):
                    c = floor
                out.append(c)
        return out

    def counts(self, total):
        """Surviving-weight count after each step for a net of ``total`` weights."""
        return [int(round(t * total)) for t in self.targets()]


def step_fraction(current_count, target_count):
    """Fraction of ``current_count`` to remove to land on ``target_count``."""
    if current_count <= 0:
        return 0.0
    return max(0.0, (current_count - target_count) / current_count)


DEFAULT_SCHEDULE = PruneSchedule()
