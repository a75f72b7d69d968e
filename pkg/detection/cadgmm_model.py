"""
The CADGMM network.

Dual encoder (tanh MLP over raw features plus a single-head graph attention
layer over k-NN neighborhoods), additive fusion followed by a linear layer,
tanh decoder, two reconstruction features, estimation network with a softmax
membership, Gaussian mixture parameters from weighted moments and per-sample
energy.

Row-vector convention throughout: a layer computes ``Z @ W + b`` with
``W`` of shape (in, out) and ``b`` of shape (1, out).
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numeric_core as nc
from .exceptions import ShapeError
from .graph_builder import build_knn_graph, context_batches
from .numeric_core import Matrix

logger = logging.getLogger(__name__)

RECON_FEATURES = "relative_euclidean+cosine"
RECON_GUARD = 1e-12
DEGENERATE_MEMBERSHIP = 1e-12
LOG_2PI = math.log(2.0 * math.pi)


# ==================== CONFIGURATION ====================

@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    encoder_dims: tuple
    graph_dim: int
    latent_dim: int
    decoder_dims: tuple
    estimator_dims: tuple
    n_components: int
    k: int
    epsilon: float = 1e-6
    linear_output: bool = False
    ablate_graph: bool = False
    recon_features: str = RECON_FEATURES

    def __post_init__(self):
        object.__setattr__(self, "encoder_dims", tuple(int(d) for d in self.encoder_dims))
        object.__setattr__(self, "decoder_dims", tuple(int(d) for d in self.decoder_dims))
        object.__setattr__(self, "estimator_dims", tuple(int(d) for d in self.estimator_dims))
        sizes = (self.input_dim, self.graph_dim, self.latent_dim, self.n_components, self.k)
        sizes += self.encoder_dims + self.decoder_dims + self.estimator_dims
        if any(s < 1 for s in sizes):
            raise ShapeError(f"layer sizes and counts must be positive: {self}")
        if not self.encoder_dims:
            raise ShapeError("feature encoder needs at least one layer")
        # fusion adds the two encoder outputs elementwise
        if self.encoder_dims[-1] != self.graph_dim:
            raise ShapeError(
                f"feature encoder output {self.encoder_dims[-1]} must equal "
                f"graph encoder output {self.graph_dim}"
            )
        if self.recon_features != RECON_FEATURES:
            raise ShapeError(f"unknown reconstruction feature set {self.recon_features!r}")
        if self.epsilon <= 0:
            raise ShapeError(f"covariance regularizer must be positive, got {self.epsilon}")

    @property
    def attention_dim(self):
        return 2 * self.graph_dim

    @property
    def embedding_dim(self):
        return self.latent_dim + 2

    def to_dict(self):
        data = asdict(self)
        for key in ("encoder_dims", "decoder_dims", "estimator_dims"):
            data[key] = list(data[key])
        return data

    @classmethod
    def from_dict(cls, data):
        return cls(**data)

    @classmethod
    def preset(cls, name, **overrides):
        return cls(**{**PRESETS[name], **overrides})


PRESETS = {
    "kdd99": dict(
        input_dim=120, encoder_dims=(64, 32), graph_dim=32, latent_dim=8,
        decoder_dims=(32, 64), estimator_dims=(20, 8), n_components=4, k=15,
    ),
    "arrhythmia": dict(
        input_dim=274, encoder_dims=(32,), graph_dim=32, latent_dim=2,
        decoder_dims=(10,), estimator_dims=(10,), n_components=2, k=5,
    ),
    "satellite": dict(
        input_dim=36, encoder_dims=(16,), graph_dim=16, latent_dim=2,
        decoder_dims=(16,), estimator_dims=(10,), n_components=4, k=13,
    ),
}


# ==================== PARAMETERS ====================

def layer_shapes(config):
    """Ordered (name, shape) for every trainable matrix"""
    shapes = []

    def dense(prefix, dims):
        for index, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            shapes.append((f"{prefix}.{index}.weight", (fan_in, fan_out)))
            shapes.append((f"{prefix}.{index}.bias", (1, fan_out)))

    dense("encoder", (config.input_dim,) + config.encoder_dims)
    shapes.append(("attention.projection", (config.graph_dim, config.input_dim)))
    shapes.append(("attention.vector", (config.attention_dim, 1)))
    shapes.append(("fusion.weight", (config.graph_dim, config.latent_dim)))
    shapes.append(("fusion.bias", (1, config.latent_dim)))
    dense("decoder", (config.latent_dim,) + config.decoder_dims + (config.input_dim,))
    dense("estimator", (config.embedding_dim,) + config.estimator_dims + (config.n_components,))
    return shapes


def _fans(name, shape):
    if name == "attention.projection":
        return shape[1], shape[0]
    return shape[0], shape[1]


class ParamStore:
    """Named trainable matrices; updates produce a new store"""

    def __init__(self, params):
        self._params = dict(params)

    @classmethod
    def initialize(cls, config, rng):
        """Glorot-uniform weights, zero biases"""
        params = {}
        for name, shape in layer_shapes(config):
            if name.endswith(".bias"):
                values = np.zeros(shape)
            else:
                fan_in, fan_out = _fans(name, shape)
                limit = math.sqrt(6.0 / (fan_in + fan_out))
                values = rng.uniform(-limit, limit, shape)
            params[name] = Matrix(values, requires_grad=True)
        return cls(params)

    @classmethod
    def from_arrays(cls, arrays):
        return cls({name: Matrix(values, requires_grad=True) for name, values in arrays.items()})

    def __getitem__(self, name):
        return self._params[name]

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def arrays(self):
        return {name: m.data for name, m in self._params.items()}

    def shapes(self):
        return {name: m.shape for name, m in self._params.items()}

    def n_values(self):
        return sum(m.rows * m.cols for m in self._params.values())

    def updated(self, values):
        """New store with the given names replaced by fresh leaf matrices"""
        params = dict(self._params)
        for name, array in values.items():
            params[name] = Matrix(array, requires_grad=True)
        return ParamStore(params)

    def check(self, config):
        expected = dict(layer_shapes(config))
        if set(expected) != set(self._params):
            missing = sorted(set(expected) - set(self._params))
            extra = sorted(set(self._params) - set(expected))
            raise ShapeError(f"parameter names differ from config (missing {missing}, extra {extra})")
        for name, shape in expected.items():
            if self._params[name].shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {self._params[name].shape}")


# ==================== NETWORK PIECES ====================

def _dense_stack(z, params, prefix, n_layers, activate_last=True):
    for index in range(n_layers):
        weight = params[f"{prefix}.{index}.weight"]
        if z.cols != weight.rows:
            raise ShapeError(f"{prefix}.{index}: input width {z.cols}, weight {weight.shape}")
        z = nc.matmul(z, weight) + params[f"{prefix}.{index}.bias"]
        if index < n_layers - 1 or activate_last:
            z = nc.tanh_act(z)
    return z


def feature_encode(x, params, config):
    return _dense_stack(x, params, "encoder", len(config.encoder_dims))


def _project(x, params):
    projection = params["attention.projection"]
    if x.cols != projection.cols:
        raise ShapeError(f"attention projection {projection.shape} cannot take {x.cols} features")
    return nc.matmul(x, nc.transpose(projection))


def attention_coefficients(x, graph, params):
    """
    Compact attention table: row i holds the weights of node i over its
    neighborhood, in the column order of ``graph.neighborhoods()``.
    """
    vector = params["attention.vector"]
    projected = _project(x, params)
    half = projected.cols
    if vector.shape != (2 * half, 1):
        raise ShapeError(f"attention vector must be ({2 * half}, 1), got {vector.shape}")
    if graph.n_nodes != x.rows:
        raise ShapeError(f"graph has {graph.n_nodes} nodes for {x.rows} samples")
    # scoring the concatenated pair splits into a self half and a neighbor half
    own_score = nc.matmul(projected, nc.take_rows(vector, range(half)))
    neighbor_score = nc.matmul(projected, nc.take_rows(vector, range(half, 2 * half)))
    logits = nc.tanh_act(own_score + nc.gather_column(neighbor_score, graph.neighborhoods()))
    return nc.row_softmax(logits)


def attention_matrix(alpha, graph):
    """Dense N x N attention weights, exactly zero outside each neighborhood"""
    return nc.scatter_neighbors(alpha, graph.neighborhoods(), graph.n_nodes)


def graph_encode(x, alpha, graph, params):
    """Attention-weighted sum of projected neighbor features for every node"""
    return nc.matmul(attention_matrix(alpha, graph), _project(x, params))


def fuse(zx, zv, params):
    if zx.shape != zv.shape:
        raise ShapeError(f"fusion needs equal shapes, got {zx.shape} and {zv.shape}")
    weight = params["fusion.weight"]
    if weight.rows != zx.cols:
        raise ShapeError(f"fusion weight {weight.shape} cannot take width {zx.cols}")
    return nc.matmul(zx + zv, weight) + params["fusion.bias"]


def decode(zf, params, config):
    return _dense_stack(
        zf, params, "decoder", len(config.decoder_dims) + 1,
        activate_last=not config.linear_output,
    )


def recon_features(x, xhat):
    """Relative Euclidean distance and cosine similarity per row (N x 2)"""
    if x.shape != xhat.shape:
        raise ShapeError(f"reconstruction shape {xhat.shape} differs from input {x.shape}")
    x_norm = nc.row_norm(x)
    xhat_norm = nc.row_norm(xhat)
    relative = nc.row_norm(x - xhat) / (x_norm + RECON_GUARD)
    cosine = nc.sum_all(x * xhat, axis=1) / (x_norm * xhat_norm + RECON_GUARD)
    return nc.concat_cols([relative, cosine])


def estimate_membership(z, params, config):
    logits = _dense_stack(
        z, params, "estimator", len(config.estimator_dims) + 1, activate_last=False,
    )
    return nc.row_softmax(logits)


# ==================== GAUSSIAN MIXTURE ====================

@dataclass(frozen=True)
class GmmState:
    phi: Matrix  # 1 x M
    means: tuple  # M matrices, 1 x P
    covariances: tuple  # M matrices, P x P, epsilon already on the diagonal
    epsilon: float
    degenerate: tuple = field(default=())

    def __post_init__(self):
        if not self.degenerate:
            object.__setattr__(self, "degenerate", (False,) * len(self.means))

    @property
    def n_components(self):
        return len(self.means)

    @property
    def dim(self):
        return self.means[0].cols

    def to_arrays(self):
        return {
            "phi": self.phi.data.ravel(),
            "means": np.vstack([m.data for m in self.means]),
            "covariances": np.stack([c.data for c in self.covariances]),
            "degenerate": np.array(self.degenerate, dtype=np.float64),
        }

    @classmethod
    def from_arrays(cls, arrays, epsilon):
        return cls(
            phi=Matrix(arrays["phi"].reshape(1, -1)),
            means=tuple(Matrix(row.reshape(1, -1)) for row in arrays["means"]),
            covariances=tuple(Matrix(c) for c in arrays["covariances"]),
            epsilon=float(epsilon),
            degenerate=tuple(bool(flag) for flag in arrays["degenerate"]),
        )


def gmm_fit(z, membership, epsilon):
    """Mixture weights, means and covariances as membership-weighted moments"""
    if membership.rows != z.rows:
        raise ShapeError(f"membership has {membership.rows} rows for {z.rows} samples")
    n, dim = z.shape
    regularizer = Matrix(epsilon * np.eye(dim))
    totals = membership.data.sum(axis=0)
    phi = nc.scale(nc.sum_all(membership, axis=0), 1.0 / n)

    means, covariances, degenerate = [], [], []
    for m in range(membership.cols):
        if totals[m] < DEGENERATE_MEMBERSHIP:
            logger.warning("mixture component %d has total membership %.3g; marked degenerate", m, totals[m])
            means.append(Matrix.zeros(1, dim))
            covariances.append(regularizer)
            degenerate.append(True)
            continue
        gamma = nc.take_cols(membership, [m])
        total = nc.sum_all(gamma)
        mean = nc.sum_all(gamma * z, axis=0) / total
        centered = z - mean
        scatter = nc.matmul(nc.transpose(centered * gamma), centered) / total
        covariance = nc.scale(scatter + nc.transpose(scatter), 0.5) + regularizer
        means.append(mean)
        covariances.append(covariance)
        degenerate.append(False)
    return GmmState(phi, tuple(means), tuple(covariances), epsilon, tuple(degenerate))


class GmmAccumulator:
    """
    Streaming weighted moments for the mixture, merged batch by batch
    (pairwise update of weight, mean and scatter).
    """

    def __init__(self, n_components, dim, epsilon):
        self.epsilon = epsilon
        self.count = 0
        self.weight = np.zeros(n_components)
        self.mean = np.zeros((n_components, dim))
        self.scatter = np.zeros((n_components, dim, dim))

    def update(self, z, membership):
        z = np.asarray(getattr(z, "data", z))
        membership = np.asarray(getattr(membership, "data", membership))
        self.count += z.shape[0]
        for m in range(membership.shape[1]):
            gamma = membership[:, m]
            batch_weight = gamma.sum()
            if batch_weight <= 0.0:
                continue
            batch_mean = gamma @ z / batch_weight
            centered = z - batch_mean
            batch_scatter = (centered * gamma[:, None]).T @ centered
            merged = self.weight[m] + batch_weight
            delta = batch_mean - self.mean[m]
            self.scatter[m] += batch_scatter + np.outer(delta, delta) * (self.weight[m] * batch_weight / merged)
            self.mean[m] += delta * (batch_weight / merged)
            self.weight[m] = merged

    def finalize(self):
        if self.count == 0:
            raise ShapeError("no samples were accumulated")
        dim = self.mean.shape[1]
        regularizer = self.epsilon * np.eye(dim)
        means, covariances, degenerate = [], [], []
        for m in range(len(self.weight)):
            if self.weight[m] < DEGENERATE_MEMBERSHIP:
                logger.warning("frozen mixture component %d is degenerate", m)
                means.append(Matrix.zeros(1, dim))
                covariances.append(Matrix(regularizer))
                degenerate.append(True)
                continue
            covariance = self.scatter[m] / self.weight[m]
            means.append(Matrix(self.mean[m].reshape(1, -1)))
            covariances.append(Matrix(0.5 * (covariance + covariance.T) + regularizer))
            degenerate.append(False)
        phi = Matrix((self.weight / self.count).reshape(1, -1))
        return GmmState(phi, tuple(means), tuple(covariances), self.epsilon, tuple(degenerate))


def energy(z, gmm):
    """Per-sample negative log mixture density as an N x 1 column"""
    if z.cols != gmm.dim:
        raise ShapeError(f"embedding width {z.cols} differs from mixture dimension {gmm.dim}")
    log_terms = []
    for m in range(gmm.n_components):
        if gmm.degenerate[m]:
            continue
        centered = z - gmm.means[m]
        logdet, solved = nc.cholesky_logdet_solve(
            gmm.covariances[m], nc.transpose(centered), epsilon=gmm.epsilon, component=m,
        )
        mahalanobis = nc.sum_all(nc.transpose(centered) * solved, axis=0)
        log_norm = nc.scale(logdet + z.cols * LOG_2PI, 0.5)
        log_weight = nc.log(nc.take_cols(gmm.phi, [m]))
        log_terms.append(log_weight - nc.scale(mahalanobis, 0.5) - log_norm)
    if not log_terms:
        raise ShapeError("every mixture component is degenerate")
    return nc.transpose(nc.scale(nc.log_sum_exp(nc.concat_rows(log_terms), axis=0), -1.0))


# ==================== FORWARD ====================

@dataclass(frozen=True)
class ForwardOutputs:
    zx: Matrix
    zv: Matrix
    zf: Matrix
    xhat: Matrix
    zr: Matrix
    z: Matrix
    membership: Matrix
    attention: Matrix = None  # compact alpha table, None when the graph branch is ablated


def forward(x, graph, params, config):
    if x.cols != config.input_dim:
        raise ShapeError(f"model expects {config.input_dim} features, got {x.cols}")
    zx = feature_encode(x, params, config)
    if config.ablate_graph:
        alpha = None
        zv = Matrix.zeros(x.rows, config.graph_dim)
    else:
        alpha = attention_coefficients(x, graph, params)
        zv = graph_encode(x, alpha, graph, params)
    zf = fuse(zx, zv, params)
    xhat = decode(zf, params, config)
    zr = recon_features(x, xhat)
    z = nc.concat_cols([zf, zr])
    membership = estimate_membership(z, params, config)
    return ForwardOutputs(zx, zv, zf, xhat, zr, z, membership, alpha)


def infer(features, params, config, batch_size, workers=1):
    """
    Untaped forward passes over ``features`` in row order.

    Yields (ContextBatch, ForwardOutputs); each batch gets its own k-NN graph
    and only the first ``batch.n_scored`` output rows belong to it. With
    workers > 1 batches run on a thread pool, results still arrive in order.
    """
    batches = list(context_batches(len(features), batch_size, config.k))

    def run(batch):
        with nc.no_tape():
            x = Matrix(features[batch.rows])
            return batch, forward(x, build_knn_graph(x, config.k), params, config)

    if workers <= 1:
        yield from map(run, batches)
        return
    window = 2 * workers
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for start in range(0, len(batches), window):
            yield from pool.map(run, batches[start:start + window])
