"""Experiment driver: configuration, per-fold training/evaluation and the
stage-wise hyperparameter sweep.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import data as D
from .errors import ConfigError, UndefinedMetricError
from .metrics import FoldResult, RunReport, aggregate, evaluate_fold
from .optim import SAM, Adam
from .rng import make_rng
from .tensor import cross_entropy
from .vit import ModelConfig, ViTModel, init_parameters, predict, preset, set_trainable

log = logging.getLogger(__name__)

MODEL_KINDS = ("vit", "vivit")
CSV_COLUMNS = ("config_id", "model_kind", "unfrozen_layers", "lr", "sam", "mixup_alpha", "fold",
               "f1", "auc", "precision", "recall", "train_seconds", "error")
THREADS_ENV = "ATTN_PAIN_THREADS"


@dataclass
class ExperimentConfig:
    model_kind: str = "vit"
    unfrozen_attention_layers: int | None = None   # None: every layer
    learning_rate: float = 2e-4
    use_sam: bool = False
    sam_rho: float = 0.05
    mixup_alpha: float | None = None
    mixup_fraction: float = 0.2
    mixup_same_subject: bool = True
    batch_size: int = 16
    epochs: int = 1
    head_dropout: float = 0.10
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0
    preset: str = "tiny"
    model_overrides: dict = field(default_factory=dict)
    dtype: str = "float64"
    grid_stride: int = 4
    num_folds: int = 5
    manifest: str | None = None
    synthetic: dict | None = None

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"model_kind must be one of {MODEL_KINDS}, got {self.model_kind!r}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if self.mixup_alpha is not None and self.mixup_alpha <= 0:
            raise ConfigError(f"mixup_alpha must be positive, got {self.mixup_alpha}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.manifest and self.synthetic:
            raise ConfigError("give either a manifest path or synthetic parameters, not both")
        layers = self.model_config().num_layers
        n = self.unfrozen_layers
        if not 0 <= n <= layers:
            raise ConfigError(f"unfrozen_attention_layers must be in [0, {layers}], got {n}")

    @property
    def unfrozen_layers(self) -> int:
        if self.unfrozen_attention_layers is None:
            return self.model_config().num_layers
        return int(self.unfrozen_attention_layers)

    def model_config(self) -> ModelConfig:
        return preset(self.preset, head_dropout=self.head_dropout, **self.model_overrides)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**payload)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except FileNotFoundError:
            raise FileNotFoundError(f"config file not found: {path}") from None
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(payload, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        return cls.from_dict(payload)


def load_corpus(config: ExperimentConfig) -> D.Corpus:
    if config.manifest:
        return D.load_manifest(config.manifest)
    params = dict(config.synthetic or {})
    params.setdefault("seed", config.seed)
    try:
        return D.synthetic_from_params(D.SyntheticParams(**params))
    except TypeError as exc:
        raise ConfigError(f"bad synthetic parameters: {exc}") from None


def model_inputs(config: ExperimentConfig, corpus: D.Corpus) -> D.Corpus:
    """Frames for ViT, 2x2 grids for ViViT."""
    if config.model_kind == "vivit" and not corpus.is_grid:
        return D.grid_corpus(corpus, config.grid_stride)
    return corpus


def build_folds(config: ExperimentConfig, corpus: D.Corpus) -> D.FoldAssignment:
    return D.make_folds(corpus.pain_counts(), config.num_folds, config.seed)


@dataclass
class FoldRun:
    result: FoldResult
    model: ViTModel
    optimizer: Adam
    test_indices: np.ndarray
    pain_probs: np.ndarray
    pred_labels: np.ndarray
    true_labels: np.ndarray
    closure_calls: list[int]
    train_seconds: float


class LeakageError(AssertionError):
    """A test-fold subject reached the training stream."""


def _batches(n: int, size: int):
    for start in range(0, n, size):
        yield np.arange(start, min(start + size, n))


def evaluate(model: ViTModel, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Pain probabilities for every image (evaluation mode)."""
    probs = []
    for rows in _batches(len(images), batch_size):
        p, _ = predict(model.forward(images[rows], training=False).logits)
        probs.append(p[:, 1])
    return np.concatenate(probs) if probs else np.zeros(0)


def train_fold(config: ExperimentConfig, corpus: D.Corpus, folds: D.FoldAssignment, test_fold: int,
               config_id: int = 0, on_step: Callable[[int, np.ndarray], None] | None = None) -> FoldRun:
    """Train on every fold but ``test_fold`` and evaluate on it.

    All folds and configurations start from the same initial weights
    (derived from ``config.seed``); batch order, dropout and mixup draw from
    a stream keyed by ``(seed, config_id, fold)``.
    """
    samples = model_inputs(config, corpus)
    dtype = np.float32 if config.dtype == "float32" else np.float64
    model = init_parameters(config.model_config(), config.seed, dtype)
    set_trainable(model, config.unfrozen_layers)

    test_subjects = set(folds.test_subjects(test_fold))
    train_idx = samples.indices_for(folds.train_subjects(test_fold))
    test_idx = samples.indices_for(test_subjects)
    targets = D.one_hot(samples.labels)

    adam = Adam(model.params, lr=config.learning_rate, beta1=config.beta1, beta2=config.beta2,
                eps=config.adam_eps, weight_decay=config.weight_decay)
    sam = SAM(adam, config.sam_rho) if config.use_sam else None
    rng = make_rng(config.seed, "train", config_id, test_fold)
    closure_calls: list[int] = []

    start = time.perf_counter()
    for epoch in range(config.epochs):
        order = D.oversample(train_idx, samples.labels[train_idx], rng)
        leaked = test_subjects.intersection(samples.subject_ids[order].tolist())
        if leaked:
            raise LeakageError(f"epoch {epoch}: test subjects {sorted(leaked)} in the training stream")
        plan = None
        if config.mixup_alpha is not None:
            plan = D.mixup_plan(samples.labels[order], samples.subject_ids[order], config.mixup_alpha,
                                config.mixup_fraction, config.mixup_same_subject, rng)
        for rows in _batches(len(order), config.batch_size):
            idx = order[rows]
            x, y = samples.images[idx], targets[idx]
            if plan is not None:
                x, y = x.copy(), y.copy()
                for k, r in enumerate(rows):
                    j = plan.partner[r]
                    if j >= 0:
                        x[k], y[k] = D.blend(x[k], samples.images[order[j]], y[k], targets[order[j]], plan.lam[r])
            if on_step is not None:
                on_step(epoch, idx)
            calls = [0]

            def closure():
                calls[0] += 1
                adam.zero_grad()
                loss = cross_entropy(model.forward(x, training=True, rng=rng).logits, y)
                loss.backward()
                return loss

            if sam is not None:
                sam.step(closure)
            else:
                closure()
                adam.step()
            closure_calls.append(calls[0])
    train_seconds = time.perf_counter() - start

    probs = evaluate(model, samples.images[test_idx])
    preds = (probs >= 0.5).astype(int)
    truth = samples.labels[test_idx]
    result = evaluate_fold(test_fold, probs, preds, truth)
    return FoldRun(result, model, adam, test_idx, probs, preds, truth, closure_calls, train_seconds)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def run_folds(config: ExperimentConfig, corpus: D.Corpus, folds: D.FoldAssignment,
              config_id: int = 0) -> list[FoldRun]:
    samples = model_inputs(config, corpus)

    def one(f):
        return train_fold(config, samples, folds, f, config_id)

    with ThreadPoolExecutor(max_workers=_workers()) as pool:
        return list(pool.map(one, range(folds.k)))


def report(config: ExperimentConfig, runs: list[FoldRun]) -> RunReport:
    scores = np.concatenate([r.pain_probs for r in runs])
    labels = np.concatenate([r.true_labels for r in runs])
    return aggregate([r.result for r in runs], config.to_dict(), scores, labels)


# -- sweep ------------------------------------------------------------------------
@dataclass
class SweepGrid:
    layers: tuple[int, ...] = (2, 4, 6, 8, 10, 12)
    learning_rates: tuple[float, ...] = (2e-2, 2e-3, 2e-4, 2e-5, 2e-6)
    sam: tuple[bool, ...] = (True,)
    mixup_alphas: tuple[float, ...] = (0.2, 0.4, 0.8)

    STAGES = ("layers", "lr", "sam", "mixup")


@dataclass
class SweepEntry:
    config_id: int
    model_kind: str
    stage: str
    config: ExperimentConfig
    folds: list[FoldResult]
    f1_mean: float
    f1_std: float
    auc_mean: float
    auc_std: float
    error: str = ""
    selected: bool = False


def _mean_f1(entry: SweepEntry) -> float:
    return entry.f1_mean if np.isfinite(entry.f1_mean) else -np.inf


def best_entry(entries: list[SweepEntry]) -> SweepEntry:
    """Highest mean F1; ties resolve to the earliest-enumerated configuration."""
    best = entries[0]
    for e in entries[1:]:
        if _mean_f1(e) > _mean_f1(best):
            best = e
    return best


def _evaluate_config(config: ExperimentConfig, corpus, folds, config_id: int, kind: str, stage: str,
                     record_timing: bool) -> SweepEntry:
    try:
        runs = run_folds(config, corpus, folds, config_id)
    except Exception as exc:  # a failed configuration must not abort the sweep
        log.warning("config %d (%s) failed: %s", config_id, kind, exc)
        nan = float("nan")
        empty = [FoldResult(f, nan, nan, nan, nan, 0, 0, 0, 0, str(exc)) for f in range(folds.k)]
        return SweepEntry(config_id, kind, stage, config, empty, nan, nan, nan, nan, error=str(exc))
    results = []
    for r in runs:
        res = r.result
        res.train_seconds = r.train_seconds if record_timing else 0.0
        results.append(res)
    rep = aggregate(results)
    return SweepEntry(config_id, kind, stage, config, results, rep.f1_mean, rep.f1_std, rep.auc_mean, rep.auc_std)


def run_sweep(grid: SweepGrid, base: ExperimentConfig, corpus: D.Corpus,
              kinds=MODEL_KINDS, record_timing: bool = True) -> list[SweepEntry]:
    """Sequential tuning: layers, then learning rate, then SAM, then Mixup.

    Each stage starts from the best configuration found so far.  The base
    learning rate is evaluated in the layer stage, so the learning-rate stage
    only adds the remaining grid values.
    """
    if base.learning_rate not in grid.learning_rates:
        raise ConfigError(f"base learning rate {base.learning_rate} is not in the sweep grid")
    entries: list[SweepEntry] = []
    for kind in kinds:
        kind_base = replace(base, model_kind=kind, use_sam=False, mixup_alpha=None)
        folds = build_folds(kind_base, corpus)
        samples = model_inputs(kind_base, corpus)
        kind_entries: list[SweepEntry] = []

        def run(cfg, stage):
            e = _evaluate_config(cfg, samples, folds, len(kind_entries), kind, stage, record_timing)
            kind_entries.append(e)
            return e

        stage_layers = [run(replace(kind_base, unfrozen_attention_layers=n), "layers") for n in grid.layers]
        best = best_entry(stage_layers)
        stage_lr = [run(replace(best.config, learning_rate=lr), "lr")
                    for lr in grid.learning_rates if lr != base.learning_rate]
        best = best_entry([best] + stage_lr)
        stage_sam = [run(replace(best.config, use_sam=flag), "sam") for flag in grid.sam]
        best = best_entry([best] + stage_sam)
        stage_mix = [run(replace(best.config, mixup_alpha=a), "mixup") for a in grid.mixup_alphas]
        best = best_entry([best] + stage_mix)
        best.selected = True
        entries += kind_entries
    return entries


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return "nan" if not np.isfinite(x) else format(x, ".10g")
    return str(x)


def sweep_csv(entries: list[SweepEntry]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for e in entries:
        c = e.config
        for r in e.folds:
            w.writerow([_fmt(v) for v in (e.config_id, e.model_kind, c.unfrozen_layers, c.learning_rate, c.use_sam,
                                          c.mixup_alpha, r.fold_index, r.f1, r.auc, r.precision, r.recall,
                                          float(getattr(r, "train_seconds", 0.0)), e.error or r.error)])
    return buf.getvalue()


SUMMARY_COLUMNS = ("config_id", "model_kind", "stage", "unfrozen_layers", "lr", "sam", "mixup_alpha",
                   "f1_mean", "f1_std", "auc_mean", "auc_std", "selected", "error")


def summary_csv(entries: list[SweepEntry]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for e in entries:
        c = e.config
        w.writerow([_fmt(v) for v in (e.config_id, e.model_kind, e.stage, c.unfrozen_layers, c.learning_rate,
                                      c.use_sam, c.mixup_alpha, e.f1_mean, e.f1_std, e.auc_mean, e.auc_std,
                                      e.selected, e.error)])
    return buf.getvalue()


def fold_csv(config: ExperimentConfig, runs: list[FoldRun], config_id: int = 0, record_timing: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in runs:
        res = r.result
        w.writerow([_fmt(v) for v in (config_id, config.model_kind, config.unfrozen_layers, config.learning_rate,
                                      config.use_sam, config.mixup_alpha, res.fold_index, res.f1, res.auc,
                                      res.precision, res.recall, r.train_seconds if record_timing else 0.0,
                                      res.error)])
    return buf.getvalue()


def report_json(rep: RunReport) -> str:
    payload = {
        "config": rep.config,
        "folds": [f.to_dict() for f in rep.folds],
        "f1_mean": rep.f1_mean, "f1_std": rep.f1_std,
        "auc_mean": rep.auc_mean, "auc_std": rep.auc_std, "auc_pooled": rep.auc_pooled,
        "errors": rep.errors,
    }
    return json.dumps(payload, indent=2, default=float, allow_nan=True)
