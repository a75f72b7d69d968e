"""
Scoring with a frozen model, thresholds, metrics and the experiment harnesses
(multi-seed runs, K sweeps, training-contamination sweeps).
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix, precision_recall_fscore_support

from .cadgmm_model import energy, infer
from .dataset_io import inject_noise
from .exceptions import ConfigError, DetectionError, EvaluationError
from .numeric_core import SeededRng, no_tape
from .trainer import train, with_seed

logger = logging.getLogger(__name__)

TABLE_COLUMNS = ("setting", "precision", "recall", "f1", "precision_std", "recall_std", "f1_std", "failed")


@dataclass(frozen=True)
class EvalOptions:
    batch_size: int = None  # defaults to the training batch size
    threshold_ratio: float = None  # defaults to the dataset anomaly ratio
    threshold_energy: float = None
    workers: int = 1

    def __post_init__(self):
        if self.threshold_ratio is not None and self.threshold_energy is not None:
            raise ConfigError({"threshold": "give either a ratio or an energy threshold, not both"})
        if self.threshold_ratio is not None and not 0.0 < self.threshold_ratio < 1.0:
            raise ConfigError({"threshold_ratio": f"must be in (0, 1), got {self.threshold_ratio}"})


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    zero_division: bool = False

    def as_dict(self):
        return {
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
            "tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
            "zero_division": self.zero_division,
        }


@dataclass(frozen=True)
class ScoreReport:
    energies: np.ndarray
    predictions: np.ndarray
    labels: np.ndarray
    threshold: float
    metrics: Metrics
    fingerprint: str = ""
    seed: int = None
    mode: str = "ratio"

    def to_dict(self):
        return {
            "threshold": self.threshold,
            "threshold_mode": self.mode,
            "n_scored": int(len(self.energies)),
            "n_flagged": int(self.predictions.sum()),
            "config_fingerprint": self.fingerprint,
            "seed": self.seed,
            **self.metrics.as_dict(),
        }


# ==================== SCORING ====================

def embed_dataset(features, params, gmm, config, batch_size, workers=1):
    """Embeddings Z and energies for ``features``, scored in graph batches"""
    n = len(features)
    z = np.empty((n, config.embedding_dim))
    energies = np.empty(n)
    scored = 0
    with no_tape():
        for batch, out in infer(features, params, config, batch_size, workers):
            rows = batch.rows[:batch.n_scored]
            z[rows] = out.z.data[:batch.n_scored]
            energies[rows] = energy(out.z, gmm).data[:batch.n_scored, 0]
            scored += batch.n_scored
    if scored != n:
        raise EvaluationError(f"scored {scored} of {n} rows")
    return z, energies


def score_dataset(features, params, gmm, config, batch_size, workers=1):
    """Per-row energy under the frozen mixture; k-NN neighborhoods are built inside each batch"""
    if batch_size <= config.k:
        raise ConfigError({"batch_size": f"{batch_size} must exceed k={config.k}"})
    return embed_dataset(features, params, gmm, config, batch_size, workers)[1]


def threshold_by_ratio(energies, ratio):
    """
    Flag the ceil(ratio * N) highest energies. Equal energies at the boundary
    go to the lower row index first.
    """
    if not 0.0 < ratio < 1.0:
        raise EvaluationError(f"threshold ratio must be in (0, 1), got {ratio}")
    energies = np.asarray(energies, dtype=np.float64)
    n = len(energies)
    predictions = np.zeros(n, dtype=np.int8)
    if n == 0:
        return math.inf, predictions
    n_flagged = min(n, math.ceil(round(ratio * n, 9)))
    order = np.lexsort((np.arange(n), -energies))
    predictions[order[:n_flagged]] = 1
    return float(energies[order[n_flagged - 1]]), predictions


def threshold_by_energy(energies, threshold):
    energies = np.asarray(energies, dtype=np.float64)
    return float(threshold), (energies >= threshold).astype(np.int8)


def prf1(labels, predictions):
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if labels.shape != predictions.shape:
        raise EvaluationError(f"{len(labels)} labels for {len(predictions)} predictions")
    tn, fp, fn, tp = confusion_matrix(labels, predictions, labels=[0, 1]).ravel()
    precision, recall, f1, _ = precision_recall_fscore_support(
        labels, predictions, average="binary", pos_label=1, zero_division=0,
    )
    return Metrics(
        precision=float(precision), recall=float(recall), f1=float(f1),
        tp=int(tp), fp=int(fp), fn=int(fn), tn=int(tn),
        zero_division=bool(tp + fp == 0 or tp + fn == 0),
    )


def evaluate(dataset, params, gmm, config, options, fingerprint="", seed=None):
    """Score the test split, threshold it and compute metrics"""
    rows = dataset.test_indices
    if len(rows) == 0:
        raise EvaluationError(f"{dataset.name}: test split is empty")
    if options.batch_size is None:
        raise ConfigError({"batch_size": "scoring needs a batch size"})
    energies = score_dataset(dataset.features[rows], params, gmm, config, options.batch_size, options.workers)
    if options.threshold_energy is not None:
        threshold, predictions = threshold_by_energy(energies, options.threshold_energy)
        mode = "energy"
    else:
        ratio = options.threshold_ratio or dataset.anomaly_ratio
        threshold, predictions = threshold_by_ratio(energies, ratio)
        mode = "ratio"
    labels = dataset.labels[rows]
    metrics = prf1(labels, predictions)
    logger.info(
        "%s: precision %.4f recall %.4f f1 %.4f at threshold %.6g",
        dataset.name, metrics.precision, metrics.recall, metrics.f1, threshold,
    )
    return ScoreReport(energies, predictions, labels, threshold, metrics, fingerprint, seed, mode)


def write_scores(path, report, rows=None):
    frame = pd.DataFrame({
        "row": np.arange(len(report.energies)) if rows is None else rows,
        "energy": report.energies,
        "prediction": report.predictions,
        "label": report.labels,
    })
    frame.to_csv(path, index=False, float_format="%.17g")


def export_embeddings(path, dataset, params, gmm, config, batch_size, sample=None, seed=0, workers=1):
    """
    One CSV row per test sample: z_0 .. z_{P-1}, energy, label. ``sample``
    draws that many test rows at random (kept in row order) before scoring.
    """
    rows = dataset.test_indices
    if sample is not None and sample < len(rows):
        rows = np.sort(SeededRng(seed).spawn("export").choice(rows, sample))
    z, energies = embed_dataset(dataset.features[rows], params, gmm, config, batch_size, workers)
    frame = pd.DataFrame(z, columns=[f"z_{i}" for i in range(z.shape[1])])
    frame["energy"] = energies
    frame["label"] = dataset.labels[rows]
    frame.to_csv(path, index=False, float_format="%.17g")
    logger.info("exported %d embeddings of width %d to %s", len(rows), z.shape[1], path)
    return frame


# ==================== EXPERIMENTS ====================

@dataclass(frozen=True)
class SeedOutcome:
    seed: int
    status: str  # "ok" or "failed"
    metrics: Metrics = None
    threshold: float = None
    skipped_steps: int = 0
    error: str = ""

    @property
    def ok(self):
        return self.status == "ok"

    def as_dict(self):
        data = {"seed": self.seed, "status": self.status, "threshold": self.threshold,
                "skipped_steps": self.skipped_steps, "error": self.error}
        data.update(self.metrics.as_dict() if self.metrics else {})
        return data


@dataclass
class ExperimentReport:
    dataset: str
    setting: str
    fingerprint: str
    outcomes: list = field(default_factory=list)

    @property
    def succeeded(self):
        return [o for o in self.outcomes if o.ok]

    @property
    def failed(self):
        return [o.seed for o in self.outcomes if not o.ok]

    def _column(self, name):
        return np.array([getattr(o.metrics, name) for o in self.succeeded])

    def mean(self, name):
        values = self._column(name)
        return float(values.mean()) if len(values) else float("nan")

    def std(self, name):
        values = self._column(name)
        return float(values.std()) if len(values) else float("nan")

    def summary(self):
        return {
            "setting": self.setting,
            **{name: self.mean(name) for name in ("precision", "recall", "f1")},
            **{f"{name}_std": self.std(name) for name in ("precision", "recall", "f1")},
            "failed": len(self.failed),
        }

    def to_dict(self):
        return {
            "dataset": self.dataset,
            "setting": self.setting,
            "config_fingerprint": self.fingerprint,
            "seeds": [o.seed for o in self.outcomes],
            "mean": {name: self.mean(name) for name in ("precision", "recall", "f1")},
            "std": {name: self.std(name) for name in ("precision", "recall", "f1")},
            "failed_seeds": self.failed,
            "runs": [o.as_dict() for o in self.outcomes],
        }


def _run_seed(dataset, cfg, seed, options, fingerprint, setting, log_every):
    try:
        trained = train(dataset, with_seed(cfg, seed), log_every=log_every, workers=options.workers)
        scored = evaluate(dataset, trained.params, trained.gmm, cfg.model, options, fingerprint, seed)
    except DetectionError as e:
        logger.error("%s %s seed %d failed: %s", dataset.name, setting, seed, e)
        return SeedOutcome(seed, "failed", error=str(e))
    logger.info("%s %s seed %d: f1 %.4f", dataset.name, setting, seed, scored.metrics.f1)
    return SeedOutcome(seed, "ok", scored.metrics, scored.threshold, trained.skipped_steps)


def run_experiment(dataset, cfg, seeds, options, fingerprint="", setting="", log_every=0, jobs=1):
    """
    Train and score once per seed on a fixed split; a failing seed is recorded
    and the rest still run. With jobs > 1 seeds train concurrently, outcomes
    keep seed order.
    """
    if not seeds:
        raise ConfigError({"seeds": "at least one seed is required"})
    options = options if options.batch_size else replace(options, batch_size=cfg.batch_size)
    run = partial(_run_seed, dataset, cfg, options=options, fingerprint=fingerprint, setting=setting, log_every=log_every)
    if jobs <= 1:
        outcomes = [run(seed) for seed in seeds]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(run, seeds))
    return ExperimentReport(dataset.name, setting, fingerprint, outcomes)


@dataclass
class SweepReport:
    kind: str  # "k_sweep" or "noise"
    reports: list = field(default_factory=list)

    def mean_f1(self):
        return [r.mean("f1") for r in self.reports]

    def spread(self):
        values = [v for v in self.mean_f1() if not math.isnan(v)]
        return max(values) - min(values) if values else float("nan")

    def degradation(self):
        """Mean F1 at the first (lowest) setting minus mean F1 at the last"""
        values = self.mean_f1()
        return values[0] - values[-1] if values else float("nan")

    @property
    def failed(self):
        return sum(len(r.failed) for r in self.reports)

    def to_table(self):
        return pd.DataFrame([r.summary() for r in self.reports], columns=list(TABLE_COLUMNS))

    def to_dict(self):
        data = {"kind": self.kind, "settings": [r.to_dict() for r in self.reports], "spread": self.spread()}
        if self.kind == "noise":
            data["degradation"] = self.degradation()
        return data


def k_sweep(dataset, cfg, k_values, seeds, options, fingerprint="", log_every=0, jobs=1):
    if not k_values:
        raise ConfigError({"k_values": "at least one K is required"})
    batch_size = options.batch_size or cfg.batch_size
    too_large = [k for k in k_values if k >= min(batch_size, cfg.batch_size)]
    if too_large:
        raise ConfigError({"k_values": f"K must be below the batch size {min(batch_size, cfg.batch_size)}: {too_large}"})
    sweep = SweepReport("k_sweep")
    for k in k_values:
        setting_cfg = replace(cfg, model=replace(cfg.model, k=k))
        sweep.reports.append(
            run_experiment(dataset, setting_cfg, seeds, options, fingerprint, f"k={k}", log_every, jobs)
        )
    logger.info("K sweep over %s: mean f1 spread %.4f", list(k_values), sweep.spread())
    return sweep


def noise_experiment(dataset, cfg, ratios, seeds, options, injection_seed=0, fingerprint="", log_every=0, jobs=1):
    if not ratios:
        raise ConfigError({"ratios": "at least one contamination ratio is required"})
    sweep = SweepReport("noise")
    for ratio in ratios:
        contaminated = inject_noise(dataset, ratio, injection_seed)
        sweep.reports.append(
            run_experiment(contaminated, cfg, seeds, options, fingerprint, f"noise={ratio:g}", log_every, jobs)
        )
    logger.info("noise sweep over %s: f1 degradation %.4f", list(ratios), sweep.degradation())
    return sweep

