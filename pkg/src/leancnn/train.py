"""Training loop, evaluation, learning-rate sweep, few-shot protocol.

train() runs the full loop and optionally writes a run directory.  Files
whose bytes must be identical across repeated runs with the same seeds
(config.json, trace.csv, report.json, sweep.json) never contain wall-clock
values; timings go to timing.json only.
"""

import json
import logging
import os
import time
from dataclasses import dataclass, replace

import numpy as np

from . import checkpoint
from .data import iter_batches, few_shot_subset
from .errors import ConfigError, DataError, DivergenceError
from .losses import bce_with_logits, cross_entropy
from .metrics import ConfusionMatrix, metrics_for
from .models import build
from .optim import Adam

log = logging.getLogger("leancnn.train")

LOSS_KINDS = ("auto", "bce", "ce")

# True while fit() is running; the bench module refuses to start while set,
# so one invocation never interleaves training with latency measurement
ENGINE_BUSY = False


@dataclass(frozen=True)
class TrainConfig:
    lr: float
    epochs: int = 50
    batch_size: int = 32
    seed: int = 42
    loss: str = "auto"
    eval_every: int = 1
    deterministic: bool = True

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative int, got {self.seed}")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if self.eval_every < 0:
            raise ConfigError(f"eval_every must be >= 0, got {self.eval_every}")

    def to_dict(self):
        return {"lr": self.lr, "epochs": self.epochs,
                "batch_size": self.batch_size, "seed": self.seed,
                "loss": self.loss, "eval_every": self.eval_every,
                "deterministic": self.deterministic}


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    eval_accuracy: float = None   # None on epochs without an evaluation
    seconds: float = 0.0


@dataclass
class RunResult:
    spec: object
    config: TrainConfig
    epochs: list
    report: object                # MetricsReport on the test split
    confusion: object
    wall_seconds: float
    checkpoint_path: str = None
    out_dir: str = None

    @property
    def final_accuracy(self):
        return self.report.accuracy


def resolve_loss(config_loss, model):
    kind = model.default_loss if config_loss == "auto" else config_loss
    if kind == "bce" and model.spec.num_classes != 1:
        raise ConfigError("bce loss needs a single-logit head, "
                          f"model has {model.spec.num_classes} outputs")
    if kind == "ce" and model.spec.num_classes < 2:
        raise ConfigError("ce loss needs >= 2 output classes")
    return kind


def _loss_and_grad(kind, logits, labels):
    if kind == "bce":
        targets = labels.astype(logits.dtype).reshape(-1, 1)
        return bce_with_logits(logits, targets)
    return cross_entropy(logits, labels)


def _check_labels(dataset, kind, num_classes):
    labels = np.asarray(dataset.labels)
    if len(labels) == 0:
        return
    lo, hi = int(labels.min()), int(labels.max())
    limit = 2 if kind == "bce" else num_classes
    if lo < 0 or hi >= limit:
        raise DataError(
            f"dataset labels span [{lo}, {hi}] but the model/loss accepts "
            f"[0, {limit})")


def fit(model, train_ds, config, on_epoch=None):
    """Optimize the model in place; returns the list of EpochStats.

    on_epoch, when given, is called as on_epoch(model, stats) after every
    epoch and may fill in stats.eval_accuracy.
    """
    global ENGINE_BUSY
    loss_kind = resolve_loss(config.loss, model)
    _check_labels(train_ds, loss_kind, model.spec.num_classes)
    if len(train_ds) == 0 and config.epochs > 0:
        raise DataError("cannot train on an empty dataset")
    model.set_mode(True)
    opt = Adam([(p, g) for (_, p), (_, g) in zip(model.params(), model.grads())],
               lr=config.lr)
    history = []
    last_finite = None
    ENGINE_BUSY = True
    try:
        for epoch in range(config.epochs):
            t0 = time.perf_counter()
            loss_sum = 0.0
            n_seen = 0
            for bi, batch in enumerate(iter_batches(
                    train_ds, config.batch_size, seed=config.seed, epoch=epoch)):
                logits = model.forward(batch.images)
                loss, dlogits = _loss_and_grad(loss_kind, logits, batch.labels)
                if not np.isfinite(loss):
                    raise DivergenceError(epoch, bi, last_finite)
                last_finite = loss
                model.backward(dlogits)
                opt.step()
                b = len(batch.labels)
                loss_sum += loss * b
                n_seen += b
            stats = EpochStats(epoch=epoch, mean_loss=loss_sum / max(n_seen, 1),
                               seconds=time.perf_counter() - t0)
            if on_epoch is not None:
                on_epoch(model, stats)
            history.append(stats)
            log.debug("epoch %d mean loss %.6f", epoch, stats.mean_loss)
    finally:
        ENGINE_BUSY = False
    return history


def evaluate(model, dataset, batch_size=32):
    """Run the model over a dataset in eval mode; returns (report, cm).

    Binary single-logit models predict positive when the logit is >= 0;
    multi-class models take the argmax.  The model's training flag is
    restored on exit and no layer state is modified.
    """
    if len(dataset) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    was_training = model.training
    model.set_mode(False)
    try:
        names = dataset.class_names
        if model.spec.num_classes == 1 and len(names) != 2:
            raise DataError(
                f"binary model evaluated on {len(names)}-class dataset; "
                "binarize the labels first")
        cm = ConfusionMatrix(names)
        for batch in iter_batches(dataset, batch_size, shuffle=False):
            logits = model.forward(batch.images)
            if model.spec.num_classes == 1:
                preds = (logits[:, 0] >= 0).astype(np.int64)
            else:
                preds = logits.argmax(axis=1)
            cm.update_batch(batch.labels, preds)
    finally:
        model.set_mode(was_training)
    return metrics_for(cm), cm


def _float_cell(x):
    return f"{x:.10g}"


def _write_artifacts(out_dir, spec, config, history, report, cm, wall,
                     extra_config=None):
    os.makedirs(out_dir, exist_ok=True)
    cfg = {"spec": spec.to_dict(), "train": config.to_dict()}
    if extra_config:
        cfg.update(extra_config)
    with open(os.path.join(out_dir, "config.json"), "w") as f:
        json.dump(cfg, f, indent=2, sort_keys=True)
        f.write("\n")
    lines = ["epoch,mean_loss,eval_accuracy"]
    for s in history:
        acc = _float_cell(s.eval_accuracy) if s.eval_accuracy is not None else ""
        lines.append(f"{s.epoch},{_float_cell(s.mean_loss)},{acc}")
    with open(os.path.join(out_dir, "trace.csv"), "w") as f:
        f.write("\n".join(lines) + "\n")
    from .metrics import render_report
    with open(os.path.join(out_dir, "report.json"), "w") as f:
        f.write(render_report(report, cm, "json"))
    with open(os.path.join(out_dir, "confusion.csv"), "w") as f:
        f.write(cm.to_csv())
    with open(os.path.join(out_dir, "timing.json"), "w") as f:
        json.dump({"wall_seconds": wall,
                   "epoch_seconds": [s.seconds for s in history]}, f, indent=2)
        f.write("\n")


def train(spec, train_ds, test_ds, config, out_dir=None):
    """Build a fresh model from config.seed, fit, evaluate, save artifacts."""
    t0 = time.perf_counter()
    model = build(spec, config.seed)

    def on_epoch(m, stats):
        if config.eval_every and (stats.epoch + 1) % config.eval_every == 0:
            rep, _ = evaluate(m, test_ds, config.batch_size)
            stats.eval_accuracy = rep.accuracy

    history = fit(model, train_ds, config, on_epoch=on_epoch)
    report, cm = evaluate(model, test_ds, config.batch_size)
    wall = time.perf_counter() - t0

    ckpt_path = None
    if out_dir is not None:
        _write_artifacts(out_dir, spec, config, history, report, cm, wall)
        ckpt_path = os.path.join(out_dir, "checkpoint.lcnn")
        checkpoint.save(model, ckpt_path,
                        meta={"epochs": config.epochs, "lr": config.lr})
    result = RunResult(spec=spec, config=config, epochs=history, report=report,
                       confusion=cm, wall_seconds=wall,
                       checkpoint_path=ckpt_path, out_dir=out_dir)
    result.model = model
    return result


@dataclass
class SweepEntry:
    lr: float
    status: str                   # "ok" or "diverged"
    accuracy: float = None
    precision: float = None
    recall: float = None
    f1: float = None
    diverged_at_epoch: int = None

    def to_dict(self):
        d = {"lr": self.lr, "status": self.status}
        if self.status == "ok":
            d.update(accuracy=self.accuracy, precision=self.precision,
                     recall=self.recall, f1=self.f1)
        else:
            d["diverged_at_epoch"] = self.diverged_at_epoch
        return d


@dataclass
class SweepResult:
    entries: list
    best_lr: float

    def to_dict(self):
        return {"entries": [e.to_dict() for e in self.entries],
                "best_lr": self.best_lr}


def lr_sweep(spec, train_ds, test_ds, lrs, base_config, out_dir=None):
    """Train one fresh model per learning rate and rank by test accuracy.

    A diverging rate is recorded and skipped rather than aborting the sweep.
    Ties on accuracy resolve toward the smaller learning rate.
    """
    lrs = [float(v) for v in lrs]
    if not lrs:
        raise ConfigError("lr sweep needs at least one learning rate")
    if len(set(lrs)) != len(lrs):
        raise ConfigError(f"duplicate learning rates in sweep: {lrs}")
    entries = []
    for lr in lrs:
        config = replace(base_config, lr=lr)
        sub = os.path.join(out_dir, f"lr_{lr:g}") if out_dir else None
        try:
            result = train(spec, train_ds, test_ds, config, out_dir=sub)
        except DivergenceError as e:
            log.warning("lr %g diverged at epoch %d", lr, e.epoch)
            entries.append(SweepEntry(lr=lr, status="diverged",
                                      diverged_at_epoch=e.epoch))
            continue
        r = result.report
        entries.append(SweepEntry(lr=lr, status="ok", accuracy=r.accuracy,
                                  precision=r.precision, recall=r.recall,
                                  f1=r.f1))
    ok = [e for e in entries if e.status == "ok"]
    if not ok:
        first = entries[0]
        raise DivergenceError(first.diverged_at_epoch or 0, 0, None)
    best = max(ok, key=lambda e: (e.accuracy, -e.lr))
    sweep = SweepResult(entries=entries, best_lr=best.lr)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "sweep.json"), "w") as f:
            json.dump(sweep.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
    return sweep


@dataclass
class FewShotEntry:
    shots: int
    n_train: int
    accuracy: float

    def to_dict(self):
        return {"shots": self.shots, "n_train": self.n_train,
                "accuracy": self.accuracy}


@dataclass
class FewShotResult:
    entries: list
    sampler_seed: int

    def to_dict(self):
        return {"sampler_seed": self.sampler_seed,
                "entries": [e.to_dict() for e in self.entries]}


def few_shot_experiment(spec, train_ds, test_ds, shots, config,
                        sampler_seed=None, out_dir=None):
    """Train from scratch on k examples per class for each k in shots.

    The k-subset draw uses its own seed (default config.seed + 1) so the
    sampled examples stay fixed while the training seed varies.  k=0 skips
    training entirely and scores the freshly initialized model.  After each
    run the train dataset's access audit is checked: touching more than
    k * num_classes distinct examples means the subset leaked.
    """
    shots = [int(k) for k in shots]
    if any(k < 0 for k in shots):
        raise ConfigError(f"shot counts must be >= 0, got {shots}")
    if sampler_seed is None:
        sampler_seed = config.seed + 1
    n_classes = len(train_ds.class_names)
    entries = []
    prev_acc = None
    for k in shots:
        subset = few_shot_subset(train_ds, k, sampler_seed)
        if hasattr(train_ds, "reset_audit"):
            train_ds.reset_audit()
        model = build(spec, config.seed)
        if k > 0:
            fit(model, subset, replace(config, eval_every=0))
            if hasattr(train_ds, "accessed") and \
                    len(train_ds.accessed) > k * n_classes:
                raise DataError(
                    f"few-shot run with k={k} touched "
                    f"{len(train_ds.accessed)} training examples, "
                    f"budget is {k * n_classes}")
        report, _ = evaluate(model, test_ds, config.batch_size)
        entries.append(FewShotEntry(shots=k, n_train=len(subset),
                                    accuracy=report.accuracy))
        if prev_acc is not None and report.accuracy < prev_acc:
            log.info("few-shot accuracy dipped at k=%d (%.4f < %.4f)",
                     k, report.accuracy, prev_acc)
        prev_acc = report.accuracy
    result = FewShotResult(entries=entries, sampler_seed=sampler_seed)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "fewshot.json"), "w") as f:
            json.dump(result.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
    return result
