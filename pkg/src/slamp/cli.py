"""Command-line entry point.

    slamp train|prune-loop|eval|audit|sweep [--config PATH] [--checkpoint PATH]
          [--out DIR] [--seed N]

Every command writes a CSV report (one row per epoch, stage, layer or grid
cell) and a JSON summary into the output directory. Both carry the config
hash. Results depend only on (config, seed, input checkpoint).
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import math
import os
import sys

import numpy as np

from . import numerics
from .audit import audit_sweep
from .checkpoint import (
    CheckpointError,
    checkpoint_from_network,
    load_checkpoint,
    network_from_checkpoint,
    save_checkpoint,
)
from .config import ConfigError, RunConfig, from_dict, load_config
from .data import gen_event_classes, gen_static_classes, event_rates, static_prototypes
from .dynamics import build_network
from .experiment import prune_loop, scoring_subset
from .metrics import evaluate
from .pruning import compute_scores
from .training import SGD, train_epochs

log = logging.getLogger("slamp")

REPORT_SCHEMA = 1
MODEL_FILE = "model.slmp"
PRUNED_FILE = "pruned.slmp"


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def make_datasets(cfg: RunConfig):
    """Deterministic (train, eval) splits sharing one set of class templates."""
    d = cfg.dataset
    rng = numerics.derive_rng(cfg.seed, "dataset")
    if d.kind == "static":
        silent = list(d.silent) or None
        protos = static_prototypes(rng, d.n_classes, d.shape, silent)
        train = gen_static_classes(
            rng, d.n_classes, d.shape, d.train_per_class, d.noise, protos, silent, "train", d.encoding
        )
        ev = gen_static_classes(
            rng, d.n_classes, d.shape, d.eval_per_class, d.noise, protos, silent, "eval", d.encoding
        )
        return train, ev
    rates = event_rates(rng, d.n_classes, d.shape, d.base_rate, d.contrast)
    t = cfg.neuron.timesteps
    train = gen_event_classes(rng, d.n_classes, d.shape, t, d.train_per_class, rates, split="train")
    ev = gen_event_classes(rng, d.n_classes, d.shape, t, d.eval_per_class, rates, split="eval")
    return train, ev


def init_network(cfg: RunConfig, train):
    rng = numerics.derive_rng(cfg.seed, "init")
    return build_network(cfg.architecture, train.input_shape, train.n_classes, rng)


def _meta(cfg, **extra):
    meta = {"seed": cfg.seed, "config_hash": cfg.config_hash()}
    meta.update(extra)
    return meta


def _save(net, cfg, path, velocity=None, **meta):
    ckpt = checkpoint_from_network(
        net, cfg.to_dict()["architecture"], cfg.to_dict()["neuron"], velocity, _meta(cfg, **meta)
    )
    save_checkpoint(path, ckpt)


def _load(cfg, path):
    ckpt = load_checkpoint(path)
    net, velocity = network_from_checkpoint(ckpt)
    if list(ckpt.architecture) != cfg.to_dict()["architecture"]:
        raise CheckpointError("checkpoint architecture does not match the config")
    return net, velocity, ckpt


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(path, rows, config_hash):
    if not rows:
        fields = ["config_hash"]
    else:
        fields = list(rows[0]) + ["config_hash"]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({**{k: _fmt(v) for k, v in row.items()}, "config_hash": config_hash})
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_json(path, command, cfg, payload):
    doc = {
        "schema_version": REPORT_SCHEMA,
        "command": command,
        "config_hash": cfg.config_hash(),
        "config": {k: v for k, v in cfg.to_dict().items() if k != "out"},
        **payload,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_json_safe(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _checkpoint_path(cfg, given, default_name=MODEL_FILE):
    path = given or os.path.join(cfg.out, default_name)
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint {path} not found; run `slamp train` first")
    return path


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_train(cfg: RunConfig):
    """Train from scratch; writes model.slmp, train.csv, train.json."""
    os.makedirs(cfg.out, exist_ok=True)
    train, ev = make_datasets(cfg)
    net = init_network(cfg, train)
    rng = numerics.derive_rng(cfg.seed, "train")
    steps = cfg.optim.epochs * -(-len(train) // cfg.optim.batch_size)
    opt = SGD(net, cfg.optim, steps)
    net, history = train_epochs(net, train, cfg.optim, cfg.surrogate, rng, cfg.neuron, optimizer=opt)
    result = evaluate(net, ev, cfg.neuron)
    _save(net, cfg, os.path.join(cfg.out, MODEL_FILE), opt.velocity, epoch=cfg.optim.epochs)
    write_csv(os.path.join(cfg.out, "train.csv"), history, cfg.config_hash())
    write_json(os.path.join(cfg.out, "train.json"), "train", cfg, {"history": history, "eval": result.as_dict()})
    return net, history, result


def cmd_prune_loop(cfg: RunConfig, checkpoint=None):
    """Iterative prune/fine-tune from a trained checkpoint."""
    os.makedirs(cfg.out, exist_ok=True)
    net, _, _ = _load(cfg, _checkpoint_path(cfg, checkpoint))
    train, ev = make_datasets(cfg)
    rows = prune_loop(
        net,
        train,
        ev,
        cfg.neuron,
        cfg.optim,
        cfg.surrogate,
        cfg.prune.schedule(),
        cfg.scorer,
        cfg.seed,
        cfg.prune.finetune,
        cfg.prune.scoring_samples,
    )
    _save(net, cfg, os.path.join(cfg.out, PRUNED_FILE), stage=len(rows) - 1)
    write_csv(os.path.join(cfg.out, "prune_loop.csv"), rows, cfg.config_hash())
    write_json(os.path.join(cfg.out, "prune_loop.json"), "prune-loop", cfg, {"stages": rows})
    return net, rows


def cmd_eval(cfg: RunConfig, checkpoint=None):
    os.makedirs(cfg.out, exist_ok=True)
    net, _, _ = _load(cfg, _checkpoint_path(cfg, checkpoint))
    _, ev = make_datasets(cfg)
    result = evaluate(net, ev, cfg.neuron)
    write_csv(os.path.join(cfg.out, "eval.csv"), [result.as_dict()], cfg.config_hash())
    write_json(os.path.join(cfg.out, "eval.json"), "eval", cfg, {"eval": result.as_dict()})
    return result


def cmd_audit(cfg: RunConfig, checkpoint=None, fractions=None):
    """Distortion audit of every enumerable dense layer across cut fractions."""
    os.makedirs(cfg.out, exist_ok=True)
    net, _, _ = _load(cfg, _checkpoint_path(cfg, checkpoint))
    train, _ = make_datasets(cfg)
    scoring = scoring_subset(train, cfg.prune.scoring_samples, cfg.seed)
    imap = compute_scores(net, cfg.scorer, scoring, cfg.neuron, rng=numerics.derive_rng(cfg.seed, "score", 0))
    fractions = list(cfg.audit.fractions if fractions is None else fractions)
    reports = audit_sweep(net, imap, fractions, cfg.neuron.timesteps, cfg.audit.admissible)
    for layer in sorted({r.layer for r in reports if r.skipped}):
        log.warning("layer %d skipped: too many inputs to enumerate", layer)
    rows = [r.as_dict() for r in reports]
    write_csv(os.path.join(cfg.out, "audit.csv"), rows, cfg.config_hash())
    write_json(os.path.join(cfg.out, "audit.json"), "audit", cfg, {"reports": rows})
    return reports


def cmd_sweep(cfg: RunConfig, checkpoint=None):
    """Grid over pruning frequency and fine-tuning learning rate."""
    os.makedirs(cfg.out, exist_ok=True)
    base, _, _ = _load(cfg, _checkpoint_path(cfg, checkpoint))
    train, ev = make_datasets(cfg)
    schedule = cfg.prune.schedule()
    cells = []
    for f in cfg.sweep.frequencies:
        for lr in cfg.sweep.learning_rates:
            cell = {"frequency": f, "learning_rate": lr}
            try:
                optim = type(cfg.optim)(**{**cfg.to_dict()["optim"], "learning_rate": lr})
                sched = type(schedule)(f, schedule.stages)
                rows = prune_loop(
                    copy.deepcopy(base),
                    train,
                    ev,
                    cfg.neuron,
                    optim,
                    cfg.surrogate,
                    sched,
                    cfg.scorer,
                    cfg.seed,
                    cfg.prune.finetune,
                    cfg.prune.scoring_samples,
                    max_stages=cfg.sweep.max_stages,
                )
                last = rows[-1]
                cell.update(
                    top1=last["top1"],
                    connectivity=last["connectivity"],
                    target=last["target"],
                    sparsity_deviation=abs(last["connectivity"] - last["target"]),
                    error="",
                )
            except Exception as exc:  # noqa: BLE001 - a failed cell must not stop the grid
                log.error("sweep cell f=%s lr=%s failed: %s", f, lr, exc)
                cell.update(top1=float("nan"), connectivity=float("nan"), target=float("nan"),
                            sparsity_deviation=float("nan"), error=str(exc))
            cells.append(cell)
    best = max((c["top1"] for c in cells if c["top1"] == c["top1"]), default=float("nan"))
    for c in cells:
        c["delta_top1"] = c["top1"] - best
    write_csv(os.path.join(cfg.out, "sweep.csv"), cells, cfg.config_hash())
    write_json(os.path.join(cfg.out, "sweep.json"), "sweep", cfg, {"cells": cells, "best_top1": best})
    return cells


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def resolve_config(args):
    data = {}
    if args.config:
        cfg = load_config(args.config)
        data = cfg.to_dict()
    if args.out is not None:
        data["out"] = args.out
    if args.seed is not None:
        data["seed"] = args.seed
    return from_dict(data)


def build_parser():
    parser = argparse.ArgumentParser(prog="slamp", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train", "prune-loop", "eval", "audit", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="run seed (overrides config)")
        if name != "train":
            p.add_argument("--checkpoint", help="input checkpoint (default: OUT/model.slmp)")
        if name == "audit":
            p.add_argument("--fractions", type=float, nargs="+", help="cut fractions to audit")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "train":
            _, _, result = cmd_train(cfg)
            print(json.dumps(result.as_dict(), sort_keys=True))
        elif args.command == "prune-loop":
            _, rows = cmd_prune_loop(cfg, args.checkpoint)
            for r in rows:
                print(f"stage {r['stage']:2d}  conn {r['connectivity']:.4f}  top1 {r['top1']:.4f}  sops {r['sops']:.1f}")
        elif args.command == "eval":
            print(json.dumps(cmd_eval(cfg, args.checkpoint).as_dict(), sort_keys=True))
        elif args.command == "audit":
            for r in cmd_audit(cfg, args.checkpoint, args.fractions):
                state = "skipped" if r.skipped else f"lhs {r.worst_case_lhs:.6g}  mass {r.pruned_mass:.6g}  C {r.empirical_c:.6g}"
                print(f"layer {r.layer}  p {r.fraction:.3f}  {state}")
        elif args.command == "sweep":
            for c in cmd_sweep(cfg, args.checkpoint):
                print(
                    f"f {c['frequency']:3d}  lr {c['learning_rate']:.3f}  top1 {c['top1']:.4f}  "
                    f"dacc {c['delta_top1']:+.4f}  dev {c['sparsity_deviation']:.4f}"
                )
    except (ConfigError, CheckpointError) as exc:
        print(f"slamp: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
