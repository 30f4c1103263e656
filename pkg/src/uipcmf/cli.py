"""Command-line entry point: prepare, train, evaluate, explain, search, synth.

Every run writes ``run_manifest.json`` into its output directory.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import MODEL_CLASSES
from .checkpoint import load_checkpoint
from .config import ConfigError, TrainConfig, dump_config, load_config, load_toml
from .data import DataError, Schema, ingest, k_core_filter, leave_one_out_split, load_split, \
    save_split
from .evaluator import FingerprintMismatch, evaluate, write_metrics
from .explainer import (
    DEFAULT_TEMPLATE,
    display_names,
    explain_pair,
    load_metadata,
    nearest_items,
    preference_distribution,
    render_rationale,
    write_explanation,
    write_pref_dist_csv,
    write_prototypes_csv,
)
from .search import random_search, write_trials
from .synth import SynthConfig, generate, write_labels, write_raw_log
from .trainer import NonFiniteLossError, save_result, train

log = logging.getLogger("uipcmf")


class UsageError(Exception):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_run_manifest(out_dir: Path, command: str, config: dict, inputs, seed, outputs,
                       started: float) -> Path:
    fingerprints = {}
    for p in inputs:
        p = Path(p)
        if p.is_dir():
            for f in sorted(p.iterdir()):
                if f.is_file() and f.name != "run_manifest.json":
                    fingerprints[str(f)] = sha256_file(f)
        elif p.exists():
            fingerprints[str(p)] = sha256_file(p)
    manifest = {
        "subcommand": command,
        "config": config,
        "inputs": fingerprints,
        "seed": seed,
        "version": __version__,
        "wall_time": round(time.time() - started, 3),
        "outputs": sorted(str(o) for o in outputs),
    }
    path = out_dir / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _jsonable(args: argparse.Namespace) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v)
            for k, v in vars(args).items() if k != "func"}


# --- subcommands ------------------------------------------------------------------

def cmd_prepare(args) -> dict:
    if not Path(args.input).exists():
        raise DataError(f"input file not found: {args.input}")
    if args.format == "movielens":
        schema = Schema.movielens()
    else:
        schema = Schema(
            delimiter=args.delimiter.encode().decode("unicode_escape"),
            user_col=args.user_col, item_col=args.item_col,
            rating_col=None if args.rating_col < 0 else args.rating_col,
            timestamp_col=args.timestamp_col, header=args.header,
        )
    rows = ingest(args.input, schema, args.threshold)
    dataset = k_core_filter(rows, args.user_core, args.item_core)
    seed = args.seed if args.seed is not None else 0
    bundle = leave_one_out_split(dataset, seed)
    outputs = save_split(bundle, args.out_dir)
    log.info("%d users, %d items, %d interactions -> train %d / valid %d / test %d",
             dataset.n_users, dataset.n_items, len(dataset), len(bundle.train),
             len(bundle.valid), len(bundle.test))
    return {"inputs": [args.input], "outputs": outputs, "seed": seed}


def _train_config(args) -> TrainConfig:
    config = load_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    overrides = {}
    if args.max_epochs is not None:
        overrides["max_epochs"] = args.max_epochs
    if args.patience is not None:
        overrides["patience"] = args.patience
    return config.replace(**overrides) if overrides else config


def cmd_train(args) -> dict:
    bundle = load_split(args.data)
    config = _train_config(args)
    args.resolved_config = config.to_mapping()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = train(bundle, args.model, config, step_log=out / "steps.csv",
                   verbose=not args.quiet)
    paths = save_result(result, out, bundle.fingerprint())
    log.info("best epoch %d, validation HR@10 %.4f", result.log.best_epoch, result.log.best_hr)
    outputs = [out / "steps.csv", paths["train_log"], *sorted(paths["checkpoint"].iterdir())]
    inputs = [args.data] + ([args.config] if args.config else [])
    return {"inputs": inputs, "outputs": outputs, "seed": config.seed}


def _parse_cutoffs(text: str) -> list[int]:
    try:
        ks = [int(k) for k in text.split(",") if k.strip()]
    except ValueError:
        raise UsageError(f"--k must be a comma-separated list of integers, got {text!r}")
    if not ks:
        raise UsageError("--k needs at least one cutoff")
    return ks


def cmd_evaluate(args) -> dict:
    model, manifest = load_checkpoint(args.model)
    bundle = load_split(args.data)
    report = evaluate(model, bundle, args.stage, _parse_cutoffs(args.k),
                      fingerprint=manifest.get("dataset_fingerprint"))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics = out / f"metrics_{report.stage}.csv"
    ranks = out / f"ranks_{report.stage}.csv"
    write_metrics([report], metrics, manifest["model_kind"], manifest.get("seed", ""))
    report.write_ranks(ranks)
    print(f"{'K':>4} {'HR':>8} {'NDCG':>8}")
    for k in sorted(report.hr):
        print(f"{k:>4} {report.hr[k]:>8.4f} {report.ndcg[k]:>8.4f}")
    return {"inputs": [args.model, args.data], "outputs": [metrics, ranks],
            "seed": manifest.get("seed")}


def _lookup(keys: list[str], key: str, kind: str) -> int:
    try:
        return keys.index(key)
    except ValueError:
        raise UsageError(f"unknown {kind} key {key!r}") from None


def cmd_explain(args) -> dict:
    model, manifest = load_checkpoint(args.model)
    if not getattr(model, "has_preferences", False):
        raise UsageError(f"explanations need a UIPC-MF checkpoint, got {manifest['model_kind']}")
    bundle = load_split(args.data)
    if manifest.get("dataset_fingerprint") not in (None, bundle.fingerprint()):
        raise FingerprintMismatch("checkpoint and splits use different ID maps")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metadata = load_metadata(args.metadata) if args.metadata else None
    names = display_names(bundle.item_keys, metadata)
    outputs = []
    did_something = False

    if args.user is not None or args.item is not None:
        if args.user is None or args.item is None:
            raise UsageError("--user and --item must be given together")
        u = _lookup(bundle.user_keys, args.user, "user")
        t = _lookup(bundle.item_keys, args.item, "item")
        history = bundle.train.items[bundle.train.users == u]
        record = explain_pair(model, u, t, args.top, history)
        path = out / "explain.json"
        write_explanation(record, path, bundle.user_keys, bundle.item_keys)
        outputs.append(path)
        print(render_rationale(record, args.template or DEFAULT_TEMPLATE, names, args.user))
        did_something = True

    if args.prototype is not None:
        counts = np.bincount(bundle.train.items, minlength=bundle.n_items)
        protos = range(model.n_item_prototypes) if args.prototype == -1 else [args.prototype]
        profiles = [nearest_items(model, p, args.top, counts) for p in protos]
        path = out / "prototypes.csv"
        write_prototypes_csv(profiles, path, bundle.item_keys)
        outputs.append(path)
        did_something = True

    if args.pref_dist:
        path = out / "pref_dist.csv"
        write_pref_dist_csv(preference_distribution(model), path)
        outputs.append(path)
        did_something = True

    if not did_something:
        raise UsageError("nothing to do: pass --user/--item, --prototype or --pref-dist")
    inputs = [args.model, args.data] + ([args.metadata] if args.metadata else [])
    return {"inputs": inputs, "outputs": outputs, "seed": manifest.get("seed")}


def cmd_search(args) -> dict:
    bundle = load_split(args.data)
    space = load_toml(args.space)
    base = load_toml(args.base_config) if args.base_config else None
    seed = args.seed if args.seed is not None else 0
    trials = random_search(bundle, args.model, space, args.trials, seed, base, args.parallel)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = out / "trials.csv"
    best = out / "best_config.toml"
    write_trials(trials, table)
    dump_config(trials[0].config, best)
    log.info("best trial %d: validation HR@10 %.4f", trials[0].index, trials[0].val_hr)
    inputs = [args.data, args.space] + ([args.base_config] if args.base_config else [])
    return {"inputs": inputs, "outputs": [table, best], "seed": seed}


def cmd_synth(args) -> dict:
    seed = args.seed if args.seed is not None else 0
    config = SynthConfig(args.groups, args.users_per_group, args.items_per_group,
                         args.p_in, args.p_out, seed)
    dataset = generate(config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bundle = leave_one_out_split(dataset, seed)
    outputs = save_split(bundle, out)
    outputs.append(write_labels(dataset, out / "labels.tsv"))
    outputs.append(write_raw_log(dataset, out / "interactions.tsv"))
    return {"inputs": [], "outputs": outputs, "seed": seed}


# --- parser -------------------------------------------------------------------------

def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master random seed")
    common.add_argument("--out-dir", type=Path, default=Path("."), help="output directory")
    common.add_argument("--quiet", action="store_true", help="only print errors")

    parser = argparse.ArgumentParser(prog="uipcmf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", parents=[common], help="filter and split an interaction log")
    p.add_argument("--input", required=True, type=Path)
    p.add_argument("--format", choices=["tsv", "movielens"], default="tsv",
                   help="movielens reads UserID::MovieID::Rating::Timestamp")
    p.add_argument("--delimiter", default="\\t")
    p.add_argument("--user-col", type=int, default=0)
    p.add_argument("--item-col", type=int, default=1)
    p.add_argument("--rating-col", type=int, default=-1, help="-1 when there is no rating")
    p.add_argument("--timestamp-col", type=int, default=2)
    p.add_argument("--header", action="store_true")
    p.add_argument("--threshold", type=float, default=None,
                   help="keep rows rated strictly above this value")
    p.add_argument("--user-core", type=_positive_int, default=5)
    p.add_argument("--item-core", type=_positive_int, default=5)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", parents=[common], help="train a model on prepared splits")
    p.add_argument("--data", required=True, type=Path, help="directory written by prepare")
    p.add_argument("--model", required=True, choices=list(MODEL_CLASSES), metavar="KIND",
                   help=f"one of: {', '.join(MODEL_CLASSES)}")
    p.add_argument("--config", type=Path, help="TOML file of hyperparameters")
    p.add_argument("--max-epochs", type=_positive_int)
    p.add_argument("--patience", type=_positive_int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="HR@K / NDCG@K of a checkpoint")
    p.add_argument("--model", required=True, type=Path, help="checkpoint directory")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--stage", choices=["validation", "valid", "test"], default="test")
    p.add_argument("--k", default="5,10")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("explain", parents=[common], help="explanations from a UIPC-MF checkpoint")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--user", help="raw user key")
    p.add_argument("--item", help="raw item key")
    p.add_argument("--prototype", type=int, help="item prototype index (-1 for all)")
    p.add_argument("--pref-dist", action="store_true")
    p.add_argument("--top", type=_positive_int, default=10)
    p.add_argument("--metadata", type=Path, help="item key + display columns")
    p.add_argument("--template", help="rationale template, e.g. 'Fans of {items} ...'")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("search", parents=[common], help="random hyperparameter search")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--model", required=True, choices=list(MODEL_CLASSES), metavar="KIND")
    p.add_argument("--space", required=True, type=Path)
    p.add_argument("--base-config", type=Path)
    p.add_argument("--trials", required=True, type=_positive_int)
    p.add_argument("--parallel", type=_positive_int, default=1)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("synth", parents=[common], help="planted block-structure dataset")
    p.add_argument("--groups", type=_positive_int, default=5)
    p.add_argument("--users-per-group", type=_positive_int, default=100)
    p.add_argument("--items-per-group", type=_positive_int, default=40)
    p.add_argument("--p-in", type=float, default=0.3)
    p.add_argument("--p-out", type=float, default=0.01)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    started = time.time()
    try:
        result = args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (DataError, ConfigError, FingerprintMismatch, NonFiniteLossError, ValueError,
            FileNotFoundError, OSError, IndexError) as exc:
        print(f"uipcmf {args.command}: error: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config = _jsonable(args)
    config.pop("resolved_config", None)
    if getattr(args, "resolved_config", None):
        config["train_config"] = args.resolved_config
    write_run_manifest(out, args.command, config, result.get("inputs", []),
                       result.get("seed", args.seed), result.get("outputs", []), started)
    return 0


if __name__ == "__main__":
    sys.exit(main())
