"""Command-line entry point: ``mrfgnn {generate,train,eval,trace,oracle}``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .gnn import MSG, NODE, GNNArchitecture
from .model import (CLASSIC_KINDS, Dataset, DatasetSpec, build_topology, generate_dataset,
                    load_model, sample_mrf)
from .oracle import OracleCapError, enumerate_mrf
from .training import TrainConfig, TrainingError, load_checkpoint, save_checkpoint, train

ARCH = {"node": NODE, "msg": MSG}
GNN_METHOD = {"node": harness.NODE_GNN, "msg": harness.MSG_GNN}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output path (file or directory, per verb)")
    p.add_argument("--config", default=None, help="JSON file whose keys mirror the flags")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mrfgnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a training dataset or a condition corpus")
    _common(g)
    g.add_argument("--condition", choices=list(harness.CONDITIONS), default=None)
    g.add_argument("--models-per-structure", type=int, default=100)
    g.add_argument("--models-per-cell", type=int, default=100)
    g.add_argument("--n", type=int, default=9)

    t = sub.add_parser("train", help="train a GNN on a dataset directory")
    _common(t)
    t.add_argument("--data", required=False, help="dataset directory (with manifest.json)")
    t.add_argument("--arch", choices=list(ARCH), default="node")
    t.add_argument("--task", choices=["marginals", "map"], default="marginals")
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--window", type=int, default=20)
    t.add_argument("--max-epochs", type=int, default=500)
    t.add_argument("--batch-size", type=int, default=10)
    t.add_argument("--T", type=int, default=10)
    t.add_argument("--hidden", type=int, default=5, help="state and message dimension")

    e = sub.add_parser("eval", help="score methods on a condition")
    _common(e)
    e.add_argument("--condition", choices=list(harness.CONDITIONS), default="I")
    e.add_argument("--methods", default="oracle,MF,BP,TRBP",
                   help="comma list from " + ",".join(harness.METHODS))
    e.add_argument("--checkpoint", action="append", default=[],
                   help="ARCH=PATH for a marginal checkpoint, e.g. node=ckpt.json")
    e.add_argument("--map-checkpoint", action="append", default=[],
                   help="ARCH=PATH for a MAP-task checkpoint")
    e.add_argument("--models-per-cell", type=int, default=100)
    e.add_argument("--trace-T", type=int, default=None)

    r = sub.add_parser("trace", help="convergence of GNN hidden states")
    _common(r)
    r.add_argument("--checkpoint", required=False)
    r.add_argument("--condition", choices=list(harness.CONDITIONS), default="I")
    r.add_argument("--models-per-cell", type=int, default=20)
    r.add_argument("--T-max", type=int, default=10)

    o = sub.add_parser("oracle", help="exact inference on one model")
    _common(o)
    o.add_argument("--model", default=None, help="model JSON file")
    o.add_argument("--structure", choices=[k.value for k in CLASSIC_KINDS], default="grid")
    o.add_argument("--n", type=int, default=9)
    o.add_argument("--baselines", action="store_true", help="also run MF, BP, TRBP, max-product")
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        sub = parser._subparsers._group_actions[0].choices[args.verb]
        known = {a.dest for a in sub._actions}
        unknown = [k for k in cfg if k.replace("-", "_") not in known]
        if unknown:
            raise UsageError(f"unknown config keys: {unknown}")
        sub.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})
        args = parser.parse_args(argv)
    return args


def _parse_ckpts(items, task: str) -> dict:
    out = {}
    for item in items:
        if "=" not in item:
            raise UsageError(f"checkpoint must be ARCH=PATH, got {item!r}")
        arch, path = item.split("=", 1)
        if arch not in GNN_METHOD:
            raise UsageError(f"unknown architecture {arch!r}")
        weights, _ = load_checkpoint(path)
        out[(GNN_METHOD[arch], task)] = weights
    return out


def _need(value, flag: str):
    if value is None:
        raise UsageError(f"{flag} is required")
    return value


def cmd_generate(args) -> int:
    out = Path(_need(args.out, "--out"))
    if args.condition is None:
        ds = generate_dataset(DatasetSpec(models_per_structure=args.models_per_structure, n=args.n),
                              args.seed)
        path = ds.save(out)
        print(json.dumps({"manifest": str(path), **ds.manifest()["counts"]}))
        return 0
    cells = harness.generate_condition(args.condition, args.seed, args.models_per_cell)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"format_version": 1, "condition": args.condition, "seed": args.seed,
                "models_per_cell": args.models_per_cell, "corpus_hash": harness.corpus_hash(cells),
                "paths": {}}
    for c_idx, (cell, models) in enumerate(cells.items()):
        rels = []
        for k, m in enumerate(models):
            rel = f"cell{c_idx:02d}/{k:06d}.json"
            (out / rel).parent.mkdir(parents=True, exist_ok=True)
            (out / rel).write_text(json.dumps(m.to_dict()))
            rels.append(rel)
        manifest["paths"][cell] = rels
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    print(json.dumps({"manifest": str(out / "manifest.json"), "cells": len(cells)}))
    return 0


def cmd_train(args) -> int:
    ds = Dataset.load(_need(args.data, "--data"))
    out = _need(args.out, "--out")
    arch = GNNArchitecture(ARCH[args.arch], D=args.hidden, P=args.hidden, T=args.T)
    cfg = TrainConfig(lr=args.lr, window=args.window, max_epochs=args.max_epochs,
                      batch_size=args.batch_size, task=args.task, seed=args.seed)
    weights, history = train(ds, arch, cfg)
    save_checkpoint(out, weights, cfg, history, {"dataset_hash": ds.content_hash()})
    print(json.dumps({"checkpoint": out, "best_epoch": history.best_epoch,
                      "best_val_loss": history.best_val_loss, "stop_reason": history.stop_reason}))
    return 0


def cmd_eval(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = [m for m in methods if m not in harness.METHODS]
    if unknown:
        raise UsageError(f"unknown methods {unknown}")
    ckpts = _parse_ckpts(args.checkpoint, "marginals")
    ckpts.update(_parse_ckpts(args.map_checkpoint, "map"))
    report = harness.run_condition(args.condition, methods, ckpts, seed=args.seed,
                                   models_per_cell=args.models_per_cell, trace_T=args.trace_T)
    if args.out:
        paths = harness.emit_report(report, args.out)
        print(json.dumps({"csv": str(paths[0]), "json": str(paths[1])}))
    else:
        sys.stdout.write(harness.report_csv(report))
    return 0


def cmd_trace(args) -> int:
    weights, _ = load_checkpoint(_need(args.checkpoint, "--checkpoint"))
    cells = harness.generate_condition(args.condition, args.seed, args.models_per_cell)
    models = [m for ms in cells.values() for m in ms]
    rows = harness.trace_convergence(weights, models, args.T_max)
    report = harness.MetricsReport(manifest={"condition": args.condition, "seed": args.seed,
                                             "checkpoint": harness.weights_hash(weights),
                                             "corpus_hash": harness.corpus_hash(cells)},
                                   traces=[{"condition": args.condition, **r} for r in rows])
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True))
    print(json.dumps(rows))
    return 0


def cmd_oracle(args) -> int:
    if args.model:
        lm = load_model(args.model)
        mrf = lm.mrf
    else:
        mrf = sample_mrf(build_topology(args.structure, args.n), np.random.default_rng(args.seed))
    res = enumerate_mrf(mrf)
    out = {"model": mrf.to_dict(), "log_Z": res.log_Z,
           "marginals_p1": res.marginals_p1.tolist(), "map_state": res.map_state.tolist(),
           "map_log_score": res.map_log_score}
    if args.baselines:
        from .classical import bp_max_product, bp_sum_product, mean_field, trbp

        for name, fn in (("MF", mean_field), ("BP", bp_sum_product), ("TRBP", trbp)):
            r = fn(mrf)
            out[name] = {"marginals_p1": r.marginals_p1.tolist(), "converged": r.converged,
                         "iterations": r.iterations}
        r = bp_max_product(mrf)
        out["max-product"] = {"map_state": r.map_state.tolist(), "converged": r.converged}
    text = json.dumps(out, indent=1)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return 0


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval,
            "trace": cmd_trace, "oracle": cmd_oracle}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except UsageError as exc:
        print(f"mrfgnn: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.verb](args)
    except UsageError as exc:
        print(f"mrfgnn: error: {exc}", file=sys.stderr)
        return 1
    except (TrainingError, OracleCapError, OSError, FloatingPointError, ValueError) as exc:
        print(f"mrfgnn: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
