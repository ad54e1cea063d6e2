"""Prune/fine-tune orchestration shared by the CLI and the acceptance suite."""
from __future__ import annotations

import logging

import numpy as np

from . import numerics
from .metrics import evaluate
from .pruning import allocate_and_mask, apply_prune, compute_scores, connectivity, step_fraction
from .training import SGD, train_epochs

log = logging.getLogger(__name__)


def scoring_subset(dataset, size, seed):
    """Fixed, seed-determined subsample used to collect activity statistics."""
    if size is None or size >= len(dataset):
        return dataset
    rng = numerics.derive_rng(seed, "scoring")
    idx = np.sort(rng.choice(len(dataset), size=size, replace=False))
    return dataset.subset(idx)


def stage_row(stage, target, net, result, removed_mass, removed, epoch):
    conn, _, params = connectivity(net)
    return {
        "stage": stage,
        "epoch": epoch,
        "target": target,
        "connectivity": conn,
        "params": params,
        "removed": removed,
        "removed_mass": removed_mass,
        "top1": result.top1,
        "top5": result.top5,
        "sops": result.sops,
        "membrane_variance": result.membrane_variance,
        "loss": result.loss,
    }


def prune_loop(
    net,
    train,
    eval_set,
    cfg,
    optim,
    surrogate,
    schedule,
    scorer="slamp",
    seed=0,
    finetune=True,
    scoring_samples=None,
    max_stages=None,
    on_stage=None,
):
    """Iterate score -> cut -> fine-tune over the schedule.

    Returns one report row per stage, starting with the unpruned baseline
    (stage 0). Fine-tuning runs ``schedule.frequency`` epochs after each cut,
    with a fresh optimizer whose learning-rate schedule spans that block.
    """
    total = sum(m.size for m in net.masks())
    counts = schedule.counts(total)
    if max_stages is not None:
        counts = counts[:max_stages]
    targets = [c / total for c in counts]
    scoring = scoring_subset(train, scoring_samples, seed)
    rows = [stage_row(0, 1.0, net, evaluate(net, eval_set, cfg), 0.0, 0, 0)]
    if on_stage:
        on_stage(rows[-1], net)
    epoch = 0
    for stage, (count, target) in enumerate(zip(counts, targets), start=1):
        alive = connectivity(net)[2]
        frac = step_fraction(alive, count)
        mass, removed = 0.0, 0
        if frac > 0:
            imap = compute_scores(net, scorer, scoring, cfg, rng=numerics.derive_rng(seed, "score", stage))
            decision = allocate_and_mask(imap, net.masks(), frac)
            apply_prune(net, decision)
            mass, removed = sum(decision.removed_mass), decision.removed
        if finetune and schedule.frequency > 0:
            rng = numerics.derive_rng(seed, "finetune", stage)
            steps = schedule.frequency * -(-len(train) // optim.batch_size)
            train_epochs(net, train, optim, surrogate, rng, cfg, schedule.frequency, SGD(net, optim, steps))
            epoch += schedule.frequency
        rows.append(stage_row(stage, target, net, evaluate(net, eval_set, cfg), mass, removed, epoch))
        log.info("stage %d: connectivity %.4f top1 %.4f", stage, rows[-1]["connectivity"], rows[-1]["top1"])
        if on_stage:
            on_stage(rows[-1], net)
    return rows
