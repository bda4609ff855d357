"""Training loop, evaluation and the experiment harnesses built on them."""
from __future__ import annotations

import csv
import logging
import time
import zlib
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .data import TrialSet, concat_trialsets
from .dsp import augment
from .errors import NumericError
from .metrics import MetricsReport, cross_subject_stats
from .model import EegInceptionModel, ModelConfig, build_model, count_params, model_to_bytes
from .nn import Adam, softmax_cross_entropy

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eps_inside_sqrt: bool = False
    seed: int = 0
    augment_factor: int = 1
    same_class_donors: bool = False
    zero_phase: bool = False
    shuffle: bool = True

    def validate(self) -> "TrainConfig":
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.augment_factor < 1:
            raise ValueError(f"augment_factor must be >= 1, got {self.augment_factor}")
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def _stack(trialset: TrialSet, model: EegInceptionModel) -> tuple[np.ndarray, np.ndarray]:
    cfg = model.config
    for t in trialset:
        if t.samples.shape != (cfg.in_channels, cfg.time_len):
            raise ValueError(f"trial {t.id} has shape {t.samples.shape}, model expects "
                             f"({cfg.in_channels}, {cfg.time_len})")
    return trialset.X.astype(model.dtype, copy=False), trialset.y


def train(model: EegInceptionModel, trainset: TrialSet, config: TrainConfig) -> list[dict]:
    """Minibatch Adam on softmax cross-entropy; returns per-epoch history.

    With ``config.augment_factor > 1`` the training set is first expanded by
    noise swapping. Each epoch reshuffles (seeded), walks all minibatches
    including the final partial one, and takes one optimiser step per batch.
    """
    config.validate()
    if len(trainset) == 0:
        raise ValueError("training set is empty")
    if config.augment_factor > 1:
        trainset = augment(trainset, config.augment_factor, config.seed,
                           same_class_donors=config.same_class_donors,
                           zero_phase=config.zero_phase).trials
    x, y = _stack(trainset, model)
    n = len(y)
    opt = Adam(model.parameters(), lr=config.lr, betas=(config.beta1, config.beta2), eps=config.eps,
               eps_inside_sqrt=config.eps_inside_sqrt)
    rng = np.random.default_rng(config.seed)
    history = []
    model.train()
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        loss_sum, correct = 0.0, 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            opt.zero_grad()
            logits = model.forward(x[idx])
            loss, grad = softmax_cross_entropy(logits, y[idx])
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}")
            model.backward(grad)
            try:
                opt.step()
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, batch {b}: {exc}") from exc
            loss_sum += loss * len(idx)
            correct += int(np.sum(np.argmax(logits, axis=1) == y[idx]))
        history.append({"epoch": epoch, "loss": loss_sum / n, "accuracy": correct / n})
        log.debug("epoch %d loss %.4f acc %.3f", epoch, loss_sum / n, correct / n)
    model.eval()
    return history


def predict(model: EegInceptionModel, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Eval-mode class probabilities."""
    return model.predict_proba(np.asarray(x, dtype=model.dtype), batch_size)


def evaluate(model: EegInceptionModel, testset: TrialSet, positive_class: int = 1) -> MetricsReport:
    if len(testset) == 0:
        raise ValueError("test set is empty")
    x, y = _stack(testset, model)
    proba = predict(model, x)
    pred = np.argmax(proba, axis=1)
    scores = proba[:, positive_class] if model.config.n_classes == 2 else None
    return MetricsReport.from_predictions(y, pred, model.config.n_classes, scores=scores,
                                         positive_class=positive_class)


def evaluate_scores(model: EegInceptionModel, testset: TrialSet) -> tuple[np.ndarray, np.ndarray]:
    """``(probabilities, labels)`` for ROC export."""
    x, y = _stack(testset, model)
    return predict(model, x), y


# --------------------------------------------------------------------------
# harnesses


def time_inference(model: EegInceptionModel, n_samples: int = 100, warmup: int = 3, seed: int = 0) -> float:
    """Median wall-clock seconds for one single-sample eval-mode forward."""
    cfg = model.config
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n_samples + warmup, 1, cfg.in_channels, cfg.time_len)).astype(model.dtype)
    model.eval()
    for i in range(warmup):
        model.forward(x[i])
    times = []
    for i in range(warmup, warmup + n_samples):
        t0 = time.perf_counter()
        model.forward(x[i])
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def ablate(depths, base_config: ModelConfig, trainset: TrialSet, testset: TrialSet,
           train_config: TrainConfig, csv_path=None) -> list[dict]:
    """Train and test one model per bottleneck depth.

    A failing depth is recorded in its row's ``error`` field and the sweep
    continues.
    """
    rows = []
    for depth in depths:
        row = {"depth": depth}
        try:
            cfg = replace(base_config, depth=int(depth))
            model = build_model(cfg)
            row["parameters"] = model.n_params()
            row["closed_form_parameters"] = count_params(cfg)
            row["weight_bytes"] = len(model_to_bytes(model))
            t0 = time.perf_counter()
            train(model, trainset, train_config)
            row["train_seconds"] = time.perf_counter() - t0
            row["test_accuracy"] = evaluate(model, testset).accuracy
            row["error"] = ""
        except Exception as exc:  # noqa: BLE001 - recorded, sweep continues
            log.warning("ablation depth %s failed: %s", depth, exc)
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    if csv_path is not None:
        write_rows_csv(rows, csv_path, ["depth", "parameters", "closed_form_parameters", "weight_bytes",
                                        "train_seconds", "test_accuracy", "error"])
    return rows


def fold_seed(base_seed: int, subject: str) -> int:
    return int(np.random.SeedSequence([base_seed, zlib.crc32(subject.encode())]).generate_state(1)[0])


@dataclass
class LosoResult:
    per_subject: dict
    pooled: MetricsReport
    skipped: list = field(default_factory=list)


def loso_evaluate(sets_by_subject: dict, model_config: ModelConfig, train_config: TrainConfig) -> LosoResult:
    """Leave-one-subject-out: train on the other subjects, test on the held-out one.

    The training pool of each fold is the other subjects' ``train``-tagged
    trials (all of their trials when nothing is tagged), augmented per
    ``train_config``; the held-out subject is evaluated on all its trials.
    Pooled confusion is the elementwise sum over folds.
    """
    subjects = [s for s, ts in sets_by_subject.items() if len(ts) > 0]
    skipped = [s for s, ts in sets_by_subject.items() if len(ts) == 0]
    for s in skipped:
        log.warning("subject %s has no trials; skipped", s)
    if len(subjects) < 2:
        raise ValueError("leave-one-subject-out needs at least 2 subjects with trials")

    def training_part(ts: TrialSet) -> TrialSet:
        tagged = ts.split_tagged("train")
        return tagged if len(tagged) else ts

    per_subject, all_scores, all_labels = {}, [], []
    pooled_cm = None
    for held in subjects:
        pool = concat_trialsets([training_part(sets_by_subject[s]) for s in subjects if s != held])
        seed = fold_seed(train_config.seed, held)
        model = build_model(replace(model_config, seed=seed))
        train(model, pool, replace(train_config, seed=seed))
        report = evaluate(model, sets_by_subject[held])
        per_subject[held] = report
        pooled_cm = report.confusion.copy() if pooled_cm is None else pooled_cm + report.confusion
        if model_config.n_classes == 2:
            proba, labels = evaluate_scores(model, sets_by_subject[held])
            all_scores.append(proba[:, 1])
            all_labels.append(labels)
    scores = np.concatenate(all_scores) if all_scores else None
    labels = np.concatenate(all_labels) if all_labels else None
    pooled = MetricsReport.from_confusion(pooled_cm, scores=scores, labels=labels)
    return LosoResult(per_subject, pooled, skipped)


def compare_augmentation(trainset: TrialSet, testset: TrialSet, model_config: ModelConfig,
                         train_config: TrainConfig, factors=(1, 3), seeds=(0, 1, 2, 3, 4)) -> list[dict]:
    """Augmented vs. plain training over several seeds; one row per (seed, factor)."""
    rows = []
    for seed in seeds:
        for factor in factors:
            model = build_model(replace(model_config, seed=seed))
            history = train(model, trainset, replace(train_config, seed=seed, augment_factor=factor))
            report = evaluate(model, testset)
            rows.append({"seed": seed, "factor": factor, "test_accuracy": report.accuracy,
                         "final_train_accuracy": history[-1]["accuracy"], "final_loss": history[-1]["loss"]})
    return rows


def summarize_subjects(accuracies: dict) -> dict:
    mean, std = cross_subject_stats(list(accuracies.values()))
    return {"per_subject": dict(accuracies), "mean": mean, "std": std}


def write_rows_csv(rows, path, fieldnames) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def write_history_csv(history, path) -> None:
    write_rows_csv(history, path, ["epoch", "loss", "accuracy"])
