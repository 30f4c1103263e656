"""Seeded random hyperparameter search ranked by validation HR@10.

A search space maps config keys to either a fixed value or a range table::

    "LR" = {log_uniform = [1e-4, 1e-1]}
    "Embedding size" = {int = [16, 64]}
    lambda_L1 = {log_uniform = [1e-5, 1e-1]}
    "Base loss" = {choice = ["SSM", "BPR"]}
    "Batch size" = 128
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from .config import TABLE_KEYS, ConfigError, TrainConfig
from .data import SplitBundle
from .seeding import stream
from .trainer import train

RANGE_KINDS = ("log_uniform", "uniform", "int", "choice")


def _check_space(space: dict) -> None:
    if not space:
        raise ConfigError("empty search space")
    for key, entry in space.items():
        if not isinstance(entry, dict):
            continue
        if len(entry) != 1 or next(iter(entry)) not in RANGE_KINDS:
            raise ConfigError(f"{key!r}: range must be one of {RANGE_KINDS}, got {entry!r}")
        kind, bounds = next(iter(entry.items()))
        if kind == "choice":
            if not isinstance(bounds, list) or not bounds:
                raise ConfigError(f"{key!r}: choice needs a non-empty list")
            continue
        if not isinstance(bounds, list) or len(bounds) != 2 or bounds[0] > bounds[1]:
            raise ConfigError(f"{key!r}: {kind} needs [low, high] with low <= high")
        if kind == "log_uniform" and bounds[0] <= 0:
            raise ConfigError(f"{key!r}: log_uniform bounds must be positive")


def sample_config(space: dict, rng) -> dict:
    out = {}
    for key in sorted(space):
        entry = space[key]
        if not isinstance(entry, dict):
            out[key] = entry
            continue
        kind, bounds = next(iter(entry.items()))
        if kind == "log_uniform":
            out[key] = float(math.exp(rng.uniform(math.log(bounds[0]), math.log(bounds[1]))))
        elif kind == "uniform":
            out[key] = float(rng.uniform(bounds[0], bounds[1]))
        elif kind == "int":
            out[key] = int(rng.integers(int(bounds[0]), int(bounds[1]) + 1))
        else:
            out[key] = bounds[int(rng.integers(len(bounds)))]
    return out


@dataclass
class Trial:
    index: int
    config: TrainConfig
    val_hr: float
    best_epoch: int


def _run_trial(args) -> Trial:
    index, bundle, model_kind, config = args
    result = train(bundle, model_kind, config)
    return Trial(index, result.config, result.log.best_hr, result.log.best_epoch)


def trial_configs(space: dict, n_trials: int, seed: int, base: dict | None = None):
    _check_space(space)
    configs = []
    for i in range(n_trials):
        rng = stream(seed, "search", i)
        params = {**(base or {}), **sample_config(space, rng)}
        if not any(TABLE_KEYS.get(k, k) == "seed" for k in params):
            params["seed"] = int(stream(seed, "trial-seed", i).integers(2**31))
        configs.append(TrainConfig.from_mapping(params))
    return configs


def random_search(bundle: SplitBundle, model_kind: str, space: dict, n_trials: int,
                  seed: int = 0, base: dict | None = None, parallel: int = 1) -> list[Trial]:
    """Trials sorted best-first by validation HR@10 (ties by trial index)."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    configs = trial_configs(space, n_trials, seed, base)
    jobs = [(i, bundle, model_kind, c) for i, c in enumerate(configs)]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            trials = list(pool.map(_run_trial, jobs))
    else:
        trials = [_run_trial(j) for j in jobs]
    return sorted(trials, key=lambda t: (-t.val_hr, t.index))


def write_trials(trials: list[Trial], path) -> None:
    keys = list(trials[0].config.to_mapping()) if trials else []
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "trial", "val_hr@10", "best_epoch", *keys])
        for rank, t in enumerate(trials, start=1):
            mapping = t.config.to_mapping()
            w.writerow([rank, t.index, repr(t.val_hr), t.best_epoch,
                        *(mapping[k] for k in keys)])

