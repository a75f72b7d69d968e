"""
Mini-batch training of the CADGMM objective on normal-only data.

One iteration is one mini-batch step: build the k-NN graph on the batch,
run forward, fit the mixture on the batch embeddings, assemble the four-term
loss, backpropagate through everything (mixture parameters included) and
apply one Adam update. After the last step the mixture used for scoring is
frozen from the whole training stream.
"""
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd

from . import numeric_core as nc
from .cadgmm_model import (
    GmmAccumulator, ModelConfig, ParamStore, energy, forward, gmm_fit, infer,
)
from .exceptions import (
    ConfigError, CovarianceError, DatasetError, GraphError, NonFiniteError, NonFiniteLossError,
)
from .graph_builder import build_knn_graph
from .numeric_core import Matrix, SeededRng

logger = logging.getLogger(__name__)

# A skipped step keeps NaN for the terms it could not compute and skipped = 1
LOG_COLUMNS = ("iteration", "recon", "energy", "cov_penalty", "embed_penalty", "total", "skipped")


@dataclass(frozen=True)
class LossWeights:
    energy: float = 0.1
    covariance: float = 0.005
    embedding: float = 0.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0 or not math.isfinite(value):
                raise ConfigError({name: f"loss weight must be a finite value >= 0, got {value}"})


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig
    weights: LossWeights = field(default_factory=LossWeights)
    iterations: int = 300
    batch_size: int = 1024
    learning_rate: float = 1e-4
    seed: int = 0
    checkpoint_every: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError({"iterations": f"must be >= 1, got {self.iterations}"})
        if self.batch_size <= self.model.k:
            raise ConfigError({"batch_size": f"{self.batch_size} must exceed k={self.model.k}"})
        if self.learning_rate < 0:
            raise ConfigError({"learning_rate": f"must be >= 0, got {self.learning_rate}"})
        if self.checkpoint_every < 0:
            raise ConfigError({"checkpoint_every": f"must be >= 0, got {self.checkpoint_every}"})


@dataclass(frozen=True)
class LossTerms:
    recon: float
    energy: float
    cov_penalty: float
    embed_penalty: float
    total: float

    @classmethod
    def failed(cls, **known):
        values = {name: float("nan") for name in ("recon", "energy", "cov_penalty", "embed_penalty", "total")}
        values.update(known)
        return cls(**values)

    def as_dict(self):
        return asdict(self)

    def all_finite(self):
        return all(math.isfinite(v) for v in asdict(self).values())


# ==================== LOSS ====================

def loss(out, gmm, x, weights):
    """
    Mean reconstruction error + energy, covariance-diagonal and embedding
    penalties. Returns the taped total and the individual terms.
    """
    n = x.rows
    builders = (
        ("recon", lambda: nc.scale(nc.sum_all(nc.square(x - out.xhat)), 1.0 / n)),
        ("energy", lambda: nc.mean_all(energy(out.z, gmm))),
        ("cov_penalty", lambda: _covariance_penalty(gmm)),
        ("embed_penalty", lambda: nc.scale(nc.sum_all(nc.square(out.z)), 1.0 / n)),
    )
    parts, values = {}, {}
    for name, build in builders:
        try:
            parts[name] = build()
            values[name] = parts[name].item()
        except NonFiniteError:
            values[name] = float("nan")
    if len(parts) < len(builders):
        raise NonFiniteLossError(values)

    total = (
        parts["recon"]
        + nc.scale(parts["energy"], weights.energy)
        + nc.scale(parts["cov_penalty"], weights.covariance)
        + nc.scale(parts["embed_penalty"], weights.embedding)
    )
    return total, LossTerms(total=total.item(), **values)


def _covariance_penalty(gmm):
    penalty = Matrix(0.0)
    for covariance, degenerate in zip(gmm.covariances, gmm.degenerate):
        if not degenerate:
            penalty = penalty + nc.sum_all(nc.reciprocal(nc.diag(covariance)))
    return penalty


# ==================== OPTIMIZER ====================

class AdamOptimizer:
    """Adaptive moment estimation with bias correction, state kept per parameter name"""

    def __init__(self, learning_rate=1e-4, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.first = {}
        self.second = {}

    def step(self, params, grads):
        self.t += 1
        updates = {}
        for name, param in params.items():
            g = grads.of(param)
            m = self.beta1 * self.first.get(name, 0.0) + (1 - self.beta1) * g
            v = self.beta2 * self.second.get(name, 0.0) + (1 - self.beta2) * g * g
            self.first[name], self.second[name] = m, v
            m_hat = m / (1 - self.beta1 ** self.t)
            v_hat = v / (1 - self.beta2 ** self.t)
            updates[name] = param.data - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)
        return params.updated(updates)


# ==================== STEPS ====================

@dataclass(frozen=True)
class StepResult:
    params: ParamStore
    terms: LossTerms
    skipped: bool = False
    reason: str = ""


def compute_loss(batch, params, config, weights):
    graph = build_knn_graph(batch, config.k)
    out = forward(batch, graph, params, config)
    gmm = gmm_fit(out.z, out.membership, config.epsilon)
    return loss(out, gmm, batch, weights)


def train_step(batch, cfg, params, optimizer):
    """One graph + forward + loss + backward + Adam update on ``batch``"""
    if batch.rows <= cfg.model.k:
        raise GraphError(f"batch of {batch.rows} rows cannot hold a k={cfg.model.k} graph")
    try:
        total, terms = compute_loss(batch, params, cfg.model, cfg.weights)
    except NonFiniteLossError as e:
        logger.warning("step skipped: %s", e)
        return StepResult(params, LossTerms.failed(**{k: v for k, v in e.terms.items()}), True, str(e))
    except (NonFiniteError, CovarianceError) as e:
        logger.warning("step skipped: %s", e)
        return StepResult(params, LossTerms.failed(), True, str(e))

    grads = nc.backward(total)
    if not grads.all_finite():
        logger.warning("step skipped: non-finite gradients (loss terms %s)", terms.as_dict())
        return StepResult(params, terms, True, "non-finite gradients")
    try:
        updated = optimizer.step(params, grads)
    except NonFiniteError as e:
        logger.warning("step skipped: update produced %s", e)
        return StepResult(params, terms, True, str(e))
    return StepResult(updated, terms, False)


def iterate_batches(n_rows, batch_size, k, rng):
    """Endless sequential batches over a fresh permutation per pass; short tails under k+1 rows are dropped"""
    if n_rows <= k:
        raise GraphError(f"training stream of {n_rows} rows cannot hold a k={k} graph")
    while True:
        order = rng.permutation(n_rows)
        for start in range(0, n_rows, batch_size):
            rows = order[start:start + batch_size]
            if len(rows) <= k:
                break
            yield rows


# ==================== TRAINING ====================

@dataclass
class TrainResult:
    params: ParamStore
    gmm: object
    log: list
    skipped_steps: int = 0


def freeze_gmm(features, params, config, batch_size, workers=1):
    """Mixture parameters aggregated over every row of ``features`` in graph batches"""
    accumulator = GmmAccumulator(config.n_components, config.embedding_dim, config.epsilon)
    for batch, out in infer(features, params, config, batch_size, workers):
        n = batch.n_scored
        accumulator.update(out.z.data[:n], out.membership.data[:n])
    return accumulator.finalize()


def train(dataset, cfg, on_checkpoint=None, log_every=50, workers=1):
    """Run ``cfg.iterations`` steps over the training stream, then freeze the mixture"""
    rows = dataset.train_indices
    if len(rows) == 0:
        raise DatasetError(f"{dataset.name}: training set is empty")
    features = dataset.features[rows]
    rng = SeededRng(cfg.seed)
    params = ParamStore.initialize(cfg.model, rng.spawn("init"))
    optimizer = AdamOptimizer(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_epsilon)
    batches = iterate_batches(len(rows), cfg.batch_size, cfg.model.k, rng.spawn("batches"))
    logger.info(
        "training %s: %d rows, %d parameters, %d iterations of batch %d",
        dataset.name, len(rows), params.n_values(), cfg.iterations, cfg.batch_size,
    )

    log, skipped = [], 0
    for iteration in range(1, cfg.iterations + 1):
        result = train_step(Matrix(features[next(batches)]), cfg, params, optimizer)
        params = result.params
        skipped += result.skipped
        log.append({"iteration": iteration, **result.terms.as_dict(), "skipped": int(result.skipped)})
        if log_every and iteration % log_every == 0:
            logger.info("iteration %d: %s", iteration, {k: round(v, 6) for k, v in result.terms.as_dict().items()})
        if on_checkpoint and cfg.checkpoint_every and iteration % cfg.checkpoint_every == 0:
            on_checkpoint(iteration, params)
    if skipped:
        logger.warning("%d of %d steps were skipped", skipped, cfg.iterations)

    gmm = freeze_gmm(features, params, cfg.model, cfg.batch_size, workers)
    return TrainResult(params=params, gmm=gmm, log=log, skipped_steps=skipped)


def write_training_log(path, log, effective_config=None):
    """CSV of per-iteration loss terms plus a JSON sidecar holding the effective config"""
    pd.DataFrame(log, columns=list(LOG_COLUMNS)).to_csv(path, index=False)
    if effective_config is not None:
        sidecar = f"{path}.config.json"
        with open(sidecar, "w", encoding="utf-8") as f:
            json.dump(effective_config, f, indent=2, sort_keys=True)


def with_seed(cfg, seed):
    return replace(cfg, seed=seed)
