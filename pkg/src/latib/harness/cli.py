"""Command-line entry point.

Every subcommand writes one JSON record per line on stdout and a short
human-readable table on stderr. The exit status is non-zero when an invoked
check fails.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np
import torch

from ..bounds import verify_all, verify_degradation
from ..datamodel import ConfigError, RunConfig, build_config, load_config, load_dataset, save_config, save_dataset
from ..noisegen import build_transition_matrix, inject_noise
from ..selector import infojs_select
from ..trainer import ABLATIONS, load_checkpoint, save_checkpoint, train, train_baseline
from .data import generate_blobs, generate_sbm_graph
from .experiment import BLOBS, EPSILONS, SBM, attack_accuracy, fixture_config, run_experiment
from .metrics import empirical_noise_rate, evaluate, selector_quality
from .plots import emit_plots


def _emit(record: dict, stream=None):
    stream = stream or sys.stdout
    stream.write(json.dumps(record, sort_keys=True) + "\n")


def _table(rows: list[tuple], header: tuple):
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    line = "  ".join(f"{{:<{w}}}" for w in widths)
    print(line.format(*header), file=sys.stderr)
    for r in rows:
        print(line.format(*r), file=sys.stderr)


def _fmt(v):
    return f"{v:.4f}" if isinstance(v, float) else str(v)


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else build_config({})
    overrides = {}
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = value.strip()
    if overrides:
        values = cfg.as_dict()
        values.update(overrides)
        cfg = build_config(values, defaulted=tuple(k for k in cfg.defaulted if k not in overrides))
    return cfg


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


# ---------------------------------------------------------------------------
# subcommands

def cmd_generate_data(args) -> int:
    if args.kind == "blobs":
        ds = generate_blobs(args.num_classes, args.dim, args.n, args.separation, args.seed)
    else:
        ds = generate_sbm_graph(args.num_classes, args.nodes_per_community, args.p_in, args.p_out,
                                args.dim, args.seed)
    save_dataset(ds, args.out)
    rec = {"record": "dataset", "path": args.out, "kind": args.kind, "num_examples": len(ds),
           "num_classes": ds.num_classes, "dim": ds.dim,
           **{f"n_{s}": int(ds.mask(s).sum()) for s in ("train", "val", "test")}}
    _emit(rec)
    _table([(k, _fmt(v)) for k, v in rec.items() if k != "record"], ("field", "value"))
    return 0


def cmd_inject_noise(args) -> int:
    ds = load_dataset(args.input)
    noisy = inject_noise(ds, build_transition_matrix(args.kind, args.rate, ds.num_classes), args.seed)
    save_dataset(noisy, args.out)
    rate = empirical_noise_rate(noisy)
    rec = {"record": "noise", "path": args.out, "kind": args.kind, "rate": args.rate, "seed": args.seed,
           "empirical_rate": rate}
    _emit(rec)
    _table([(k, _fmt(v)) for k, v in rec.items() if k != "record"], ("field", "value"))
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    ds = load_dataset(args.data)
    if ds.is_graph and "mode" in cfg.defaulted:
        cfg = cfg.with_(mode="graph")
    os.makedirs(args.out_dir, exist_ok=True)
    save_config(cfg, os.path.join(args.out_dir, "config.txt"))
    if args.baseline:
        state, history = train_baseline(ds, cfg)
    else:
        state, history = train(ds, cfg, ablate=args.ablate)
    save_checkpoint(state, os.path.join(args.out_dir, "checkpoint.latib"))
    with open(os.path.join(args.out_dir, "history.jsonl"), "w") as fh:
        for rec in history:
            _emit(rec, fh)
            _emit(rec)
        for epoch, masks in state.selections:
            rec = {"record": "selector", "epoch": epoch, **selector_quality(masks, ds), **masks.counts()}
            _emit(rec, fh)
            _emit(rec)
    if args.dump_selection:
        with open(os.path.join(args.out_dir, "selection.jsonl"), "w") as fh:
            for epoch, masks in state.selections:
                _emit({"record": "selection", "epoch": epoch, **masks.counts()}, fh)
            # per-sample scores of the final model against the observed labels
            masks, scores = infojs_select(state.model, ds, state.observed, cfg.params, state.graph,
                                          cfg.settings.js_samples, seed=cfg.seed,
                                          confidence=cfg.settings.selector_confidence, return_scores=True)
            train_idx = ds.indices("train")
            for i, row in enumerate(train_idx):
                _emit({"record": "sample", "index": int(row), "loss_s": float(scores.loss[i]),
                       "js": float(scores.js[i]), "confidence": float(scores.confidence[i]),
                       "set": "clean" if masks.clean[i] else "noise" if masks.noise[i] else "uncertain"}, fh)
    final = evaluate(state.model, ds, "test")
    _emit({"record": "evaluation", **final})
    _table([(k, _fmt(v)) for k, v in final.items()], ("metric", "value"))
    return 0


def cmd_evaluate(args) -> int:
    ds = load_dataset(args.data)
    state = load_checkpoint(args.checkpoint, ds)
    rec = {"record": "evaluation", **evaluate(state.model, ds, args.split, graph=state.graph)}
    _emit(rec)
    _table([(k, _fmt(v)) for k, v in rec.items() if k != "record"], ("metric", "value"))
    return 0


def cmd_attack_eval(args) -> int:
    ds = load_dataset(args.data)
    state = load_checkpoint(args.checkpoint, ds)
    eps = sorted({0.0, *_floats(args.epsilons)})
    acc = attack_accuracy(state.model, ds, eps, args.split)
    clean = evaluate(state.model, ds, args.split, graph=state.graph)["acc_s"]
    rows = []
    for e in eps:
        _emit({"record": "attack", "epsilon": e, "accuracy": acc[e], "drop": clean - acc[e]})
        rows.append((_fmt(e), _fmt(acc[e]), _fmt(clean - acc[e])))
    _table(rows, ("epsilon", "accuracy", "drop"))
    return 0 if acc[0.0] == clean else 1


def cmd_verify_bounds(args) -> int:
    records = verify_all(args.trials, args.seed, args.eps) + [verify_degradation(args.channels, args.seed)]
    for r in records:
        _emit(r.as_dict())
    _table([(r.name, r.trials, f"{r.min_slack:.3e}", r.violations, "pass" if r.passed else "FAIL")
            for r in records], ("check", "trials", "min_slack", "violations", "status"))
    return 0 if all(r.passed for r in records) else 1


def cmd_plot(args) -> int:
    history, quality = [], {}
    with open(args.history) as fh:
        for line in fh:
            rec = json.loads(line)
            if rec.get("record") == "epoch":
                history.append(rec)
            elif rec.get("record") == "selector":
                quality[rec["epoch"]] = rec
    paths = emit_plots(history, args.out_dir, quality or None)
    for p in paths:
        _emit({"record": "plot", "path": p})
    _table([(p,) for p in paths], ("file",))
    return 0


def cmd_experiment(args) -> int:
    cfg = fixture_config(_config(args), args.data_kind)
    spec = dict(BLOBS if args.data_kind == "blobs" else SBM)
    if args.rate is not None:
        spec["rate"] = args.rate
    seeds = [int(s) for s in args.seeds.split(",")]
    ablations = [a for a in args.ablations.split(",") if a] if args.ablations else []
    for a in ablations:
        if a not in ABLATIONS:
            raise ConfigError(f"unknown ablation {a!r}")
    epsilons = sorted({0.0, *_floats(args.epsilons)}) if args.epsilons else None
    report = run_experiment(cfg, spec, seeds, baseline=True, ablations=ablations, epsilons=epsilons)
    for row in report["rows"]:
        _emit(row)
    for row in report.get("selector_trajectory", []):
        _emit({"record": "selector", **row})
    _emit({"record": "summary", "gap": report.get("gap"), "seeds": report["seeds"]})
    _table([(r["name"], _fmt(r["mean"]), _fmt(r["std"]), r["n_seeds"]) for r in report["rows"]],
           ("name", "mean", "std", "n_seeds"))
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="latib", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-data", help="write a synthetic dataset")
    g.add_argument("--kind", choices=("blobs", "sbm"), default="blobs")
    g.add_argument("--num-classes", type=int, default=4)
    g.add_argument("--dim", type=int, default=None)
    g.add_argument("--n", type=int, default=2000)
    g.add_argument("--separation", type=float, default=BLOBS["separation"])
    g.add_argument("--nodes-per-community", type=int, default=100)
    g.add_argument("--p-in", type=float, default=0.1)
    g.add_argument("--p-out", type=float, default=0.01)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate_data)

    n = sub.add_parser("inject-noise", help="corrupt the training labels of a dataset")
    n.add_argument("--kind", choices=("symmetric", "pair"), default="symmetric")
    n.add_argument("--rate", type=float, required=True)
    n.add_argument("--seed", type=int, default=0)
    n.add_argument("--in", dest="input", required=True)
    n.add_argument("--out", required=True)
    n.set_defaults(func=cmd_inject_noise)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config")
    t.add_argument("--set", action="append", metavar="KEY=VALUE")
    t.add_argument("--data", required=True)
    t.add_argument("--out-dir", required=True)
    t.add_argument("--ablate", choices=("no-ki", "no-rt"))
    t.add_argument("--baseline", action="store_true", help="train the single-encoder cross-entropy baseline")
    t.add_argument("--dump-selection", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="accuracy of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test", choices=("train", "val", "test"))
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("attack-eval", help="FGSM accuracy sweep")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--epsilons", default=",".join(str(v) for v in EPSILONS[1:]))
    a.add_argument("--split", default="test", choices=("train", "val", "test"))
    a.set_defaults(func=cmd_attack_eval)

    v = sub.add_parser("verify-bounds", help="randomised checks of the information inequalities")
    v.add_argument("--trials", type=int, default=1000)
    v.add_argument("--channels", type=int, default=100)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--eps", type=float, default=0.01)
    v.set_defaults(func=cmd_verify_bounds)

    pl = sub.add_parser("plot", help="training curves from a history file")
    pl.add_argument("--history", required=True)
    pl.add_argument("--out-dir", required=True)
    pl.set_defaults(func=cmd_plot)

    x = sub.add_parser("experiment", help="multi-seed comparison against the baseline")
    x.add_argument("--config")
    x.add_argument("--set", action="append", metavar="KEY=VALUE")
    x.add_argument("--data-kind", choices=("blobs", "sbm"), default="blobs")
    x.add_argument("--rate", type=float)
    x.add_argument("--seeds", default="0")
    x.add_argument("--ablations", default="")
    x.add_argument("--epsilons")
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "dim", "unset") is None:
        args.dim = 8 if args.kind == "blobs" else 16
    torch.set_num_threads(1)
    np.seterr(all="ignore")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"latib {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
