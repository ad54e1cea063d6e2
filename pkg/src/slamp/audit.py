"""Worst-case output distortion of pruned layers by exhaustive enumeration.

For a dense layer with removed weights ``D = W - W_pruned`` (in x out) the
accumulated deviation over ``T`` steps is ``|| sum_t D.T @ S_t ||^2`` with
every ``S_t`` in the unit box. The objective is convex in the accumulated
input ``sum_t S_t``, which ranges over ``T`` times the box, so the supremum
sits at ``T * v`` for a binary vertex ``v``: ``T^2 * max_v ||D.T @ v||^2``.

:func:`worst_case_distortion` enumerates every vertex (float64 screen via the
compiled kernel, exact rational re-evaluation of the near-maximal ones) and
checks the ``T^2`` identity against a literal enumeration of per-timestep
assignments whenever that is small enough.

Two admissible sets are supported: ``all-binary`` (every input may fire) and
``observed-support`` (only inputs that showed activity in the scoring data may
fire).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np

from . import numerics
from .pruning import allocate_and_mask

MAX_INPUTS = 14
SEQUENCE_BUDGET = 1 << 16
ADMISSIBLE = ("all-binary", "observed-support")


class EnumerationLimitError(ValueError):
    """Layer has too many inputs for exhaustive enumeration."""


@dataclass
class AuditReport:
    layer: int
    fraction: float
    admissible: str
    timesteps: int
    pruned_mass: float
    worst_case_lhs: float
    empirical_c: float
    pathological: bool = False
    skipped: bool = False

    def as_dict(self):
        return asdict(self)


def _exact(m):
    return [[Fraction(float(x)) for x in row] for row in m]


def _exact_value(rows, counts):
    """``|| sum_i counts[i] * rows[i] ||^2`` in exact arithmetic."""
    m = len(rows[0]) if rows else 0
    acc = [Fraction(0)] * m
    for c, row in zip(counts, rows):
        if c:
            for o in range(m):
                acc[o] += c * row[o]
    return sum(a * a for a in acc)


def _screen(values, rel=1e-9):
    top = float(values.max())
    return np.flatnonzero(values >= top - rel * abs(top) - 1e-300)


def _bits(v, n):
    return [(v >> i) & 1 for i in range(n)]


def vertex_max(delta, backend=None):
    """Exact ``max_v ||delta.T @ v||^2`` over binary ``v`` (a ``Fraction``)."""
    delta = np.asarray(delta)
    n = delta.shape[0]
    if n == 0:
        return Fraction(0)
    if n > MAX_INPUTS:
        raise EnumerationLimitError(f"{n} inputs exceed the enumeration cap of {MAX_INPUTS}")
    vals = numerics.vertex_sq_norms(delta, backend=backend)
    rows = _exact(delta)
    return max(_exact_value(rows, _bits(int(v), n)) for v in _screen(vals))


def sequence_sup(delta, timesteps):
    """Exact supremum over every per-timestep binary assignment.

    Enumerates all ``(2^n)^T`` sequences; only for tiny layers.
    """
    delta = np.asarray(delta, dtype=np.float64)
    n = delta.shape[0]
    if n == 0:
        return Fraction(0)
    if (1 << n) ** timesteps > SEQUENCE_BUDGET * 64:
        raise EnumerationLimitError("too many sequences to enumerate")
    verts = ((np.arange(1 << n)[:, None] >> np.arange(n)) & 1).astype(np.int64)
    counts = np.zeros(((1 << n) ** timesteps, n), dtype=np.int64)
    for row, seq in enumerate(itertools.product(range(1 << n), repeat=timesteps)):
        counts[row] = verts[list(seq)].sum(axis=0)
    sums = counts.astype(np.float64) @ delta
    vals = np.einsum("ij,ij->i", sums, sums)
    rows = _exact(delta)
    return max(_exact_value(rows, [int(c) for c in counts[r]]) for r in _screen(vals))


def _restrict(delta, support):
    if support is None:
        return delta
    return delta[np.asarray(support, dtype=bool)]


def worst_case_distortion_exact(w, w_pruned, timesteps, admissible="all-binary", support=None, backend=None):
    if admissible not in ADMISSIBLE:
        raise ValueError(f"unknown admissible set {admissible!r}")
    w = np.asarray(w)
    w_pruned = np.asarray(w_pruned)
    if w.shape != w_pruned.shape or w.ndim != 2:
        raise numerics.DimensionError("expected matching (in, out) weight matrices")
    if w.shape[0] > MAX_INPUTS:
        raise EnumerationLimitError(f"{w.shape[0]} inputs exceed the enumeration cap of {MAX_INPUTS}")
    delta = w.astype(np.float64) - w_pruned.astype(np.float64)
    if admissible == "observed-support":
        if support is None:
            raise ValueError("observed-support audit needs the activity support")
        delta = _restrict(delta, support)
    # rows of zeros never change the objective; dropping them keeps the
    # near-maximal candidate set small
    delta = delta[np.any(delta != 0, axis=1)]
    single = vertex_max(delta, backend)
    # accumulated-input form: the best sequence repeats one vertex T times
    n = delta.shape[0]
    if n == 0:
        return Fraction(0)
    scaled = numerics.vertex_sq_norms(delta * timesteps, backend=backend)
    rows = _exact(delta)
    accumulated = max(
        _exact_value(rows, [timesteps * b for b in _bits(int(v), n)]) for v in _screen(scaled)
    )
    if accumulated != timesteps * timesteps * single:
        raise AssertionError("accumulated supremum differs from T^2 times the vertex maximum")
    if (1 << n) ** timesteps <= SEQUENCE_BUDGET:
        if sequence_sup(delta, timesteps) != accumulated:
            raise AssertionError("sequence enumeration disagrees with the vertex supremum")
    return accumulated


def worst_case_distortion(w, w_pruned, timesteps, admissible="all-binary", support=None, backend=None):
    """Supremum of the accumulated squared output deviation (float)."""
    return float(worst_case_distortion_exact(w, w_pruned, timesteps, admissible, support, backend))


def _support(activity):
    if activity is None:
        return None
    return np.asarray(activity) > 0


def audit_layer(layer, scores, new_mask, timesteps, admissible="all-binary", activity=None, layer_id=0, fraction=0.0):
    """Both sides of the distortion bound for one dense layer.

    ``scores`` are the layer's normalized importance scores, ``new_mask`` the
    mask after the cut being audited.
    """
    if layer.kind != "dense":
        raise EnumerationLimitError("only dense layers can be audited")
    w = layer.effective_weights
    pruned = new_mask * w
    removed = (layer.mask > 0) & (new_mask == 0)
    mass = float(np.sum(np.asarray(scores)[removed]))
    lhs = worst_case_distortion(w, pruned, timesteps, admissible, _support(activity))
    pathological = False
    if mass > 0:
        c = lhs / mass
    elif lhs > 0:
        c = math.inf
        pathological = True
    else:
        c = 0.0
    return AuditReport(layer_id, fraction, admissible, timesteps, mass, lhs, c, pathological)


def audit_sweep(net, imap, fractions, timesteps, admissible="all-binary"):
    """Audit every dense layer at each global cut fraction (0 allowed)."""
    reports = []
    masks = net.masks()
    for frac in fractions:
        if frac == 0:
            new_masks = [m.copy() for m in masks]
        else:
            new_masks = allocate_and_mask(imap, masks, frac).masks
        for k, (i, layer) in enumerate(net.prunable_layers()):
            if layer.kind != "dense" or layer.weights.shape[0] > MAX_INPUTS:
                reports.append(AuditReport(i, frac, admissible, timesteps, 0.0, 0.0, 0.0, skipped=True))
                continue
            act = imap.activity[k] if imap.activity else None
            if admissible == "observed-support" and act is None:
                act = np.ones(layer.weights.shape[0])
            reports.append(
                audit_layer(layer, imap.scores[k], new_masks[k], timesteps, admissible, act, i, frac)
            )
    return reports
