"""Mini-batch training with early stopping on validation HR@10."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import build_model
from .checkpoint import save_checkpoint
from .config import TrainConfig
from .data import PopularityTable, PositiveIndex, SplitBundle, sample_train_negatives
from .evaluator import evaluate
from .losses import Batch, LossReport, total_loss
from .optim import make_optimizer
from .seeding import stream

log = logging.getLogger(__name__)

SELECTION_K = 10
LOSS_FIELDS = ["base", "l2", "r1", "r2", "r3", "r4", "l1_pref", "total"]


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass
class EpochRecord:
    epoch: int
    losses: list[float]
    val_hr: float
    val_ndcg: float
    wall_time: float


@dataclass
class TrainLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_hr: float = -1.0

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", *LOSS_FIELDS, f"val_hr@{SELECTION_K}",
                        f"val_ndcg@{SELECTION_K}", "wall_time", "best"])
            for rec in self.epochs:
                w.writerow([rec.epoch, *map(repr, rec.losses), repr(rec.val_hr),
                            repr(rec.val_ndcg), f"{rec.wall_time:.3f}",
                            int(rec.epoch == self.best_epoch)])


@dataclass
class TrainResult:
    model: object
    log: TrainLog
    config: TrainConfig
    model_kind: str


def effective_config(model_kind: str, config: TrainConfig) -> TrainConfig:
    """Plain ``uipc-mf`` is the variant without the L1 preference norm."""
    if model_kind == "uipc-mf" and config.lambda_l1 != 0:
        log.warning("model uipc-mf ignores lambda_L1=%s; use uipc-mf-l1", config.lambda_l1)
        return config.replace(lambda_l1=0.0)
    return config


def train(bundle: SplitBundle, model_kind: str, config: TrainConfig,
          step_log=None, verbose: bool = False) -> TrainResult:
    """Train ``model_kind`` on ``bundle.train``; return the best-validation model.

    ``step_log``, if given, is a path receiving one CSV row of loss terms per step.
    """
    config = effective_config(model_kind, config)
    config.validate()
    if len(bundle.valid) == 0:
        raise ValueError("no validation users; every user needs >= 3 interactions")
    seed = config.seed
    model = build_model(model_kind, bundle.n_users, bundle.n_items, config.dim,
                        stream(seed, "init"), config.n_user_prototypes, config.n_item_prototypes)
    optimizer = make_optimizer(config.optimizer, model.tensors(), config.learning_rate)
    reg = config.reg_weights()

    train_users, train_items = bundle.train.users, bundle.train.items
    positives = PositiveIndex(train_users, train_items, bundle.n_items)
    popularity = (PopularityTable.from_train(train_items, bundle.n_items)
                  if config.sampling == "popular" else None)

    step_fh = step_writer = None
    if step_log is not None:
        step_fh = open(step_log, "w", encoding="utf-8", newline="")
        step_writer = csv.writer(step_fh, lineterminator="\n")
        step_writer.writerow(["epoch", "step", *LOSS_FIELDS])

    history = TrainLog()
    best_model = model.copy()
    try:
        for epoch in range(1, config.max_epochs + 1):
            start = time.perf_counter()
            order = stream(seed, "shuffle", epoch).permutation(len(train_users))
            neg_rng = stream(seed, "train-negatives", epoch)
            sums = np.zeros(len(LOSS_FIELDS))
            n_steps = 0
            for step, s in enumerate(range(0, len(order), config.batch_size), start=1):
                idx = order[s:s + config.batch_size]
                users = train_users[idx]
                negs = sample_train_negatives(users, config.n_neg, bundle.n_items, positives,
                                              neg_rng, config.sampling, popularity)
                batch = Batch(users, train_items[idx], negs)
                report, grads = total_loss(model, batch, reg, config.base_loss)
                _check_finite(report, epoch, step)
                optimizer.step(grads)
                row = report.as_row()
                sums += row
                n_steps += 1
                if step_writer is not None:
                    step_writer.writerow([epoch, step, *map(repr, row)])

            metrics = evaluate(model, bundle, "valid", (SELECTION_K,))
            hr, nd = metrics.hr[SELECTION_K], metrics.ndcg[SELECTION_K]
            history.epochs.append(EpochRecord(epoch, (sums / max(n_steps, 1)).tolist(), hr, nd,
                                              time.perf_counter() - start))
            if verbose:
                log.info("epoch %d loss %.5f val HR@10 %.4f NDCG@10 %.4f",
                         epoch, sums[-1] / max(n_steps, 1), hr, nd)
            if hr > history.best_hr:
                history.best_hr, history.best_epoch = hr, epoch
                best_model = model.copy()
            elif epoch - history.best_epoch >= config.patience:
                break
    finally:
        if step_fh is not None:
            step_fh.close()
    return TrainResult(best_model, history, config, model_kind)


def _check_finite(report: LossReport, epoch: int, step: int) -> None:
    bad = report.nonfinite_terms()
    if bad:
        raise NonFiniteLossError(
            f"non-finite loss at epoch {epoch} step {step}: {', '.join(bad)}"
        )


def save_result(result: TrainResult, out_dir, fingerprint: str) -> dict[str, Path]:
    out = Path(out_dir)
    ckpt = save_checkpoint(
        result.model, out / "checkpoint", model_kind=result.model_kind,
        config=result.config.to_mapping(), seed=result.config.seed, fingerprint=fingerprint,
        extra={"best_epoch": result.log.best_epoch, "best_val_hr@10": result.log.best_hr},
    )
    log_path = out / "train_log.csv"
    result.log.write_csv(log_path)
    return {"checkpoint": ckpt, "train_log": log_path}
