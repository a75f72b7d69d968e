"""
k-NN correlation graph over one batch of samples.

Neighbors are the k smallest Euclidean distances in the normalized feature
space, self excluded, ties broken by ascending node index. Attention
neighborhoods are the directed k-NN lists with the node itself appended.
"""
import csv
import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .exceptions import GraphError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NeighborGraph:
    n_nodes: int
    k: int
    neighbors: np.ndarray  # (n_nodes, k) directed k-NN lists, nearest first
    self_loops: bool = True

    def neighborhoods(self):
        """Per-node index table used by attention: k-NN list plus self when enabled"""
        if not self.self_loops:
            return self.neighbors
        own = np.arange(self.n_nodes, dtype=self.neighbors.dtype).reshape(-1, 1)
        return np.hstack([self.neighbors, own])


def build_knn_graph(x, k, self_loops=True):
    """Brute-force k-NN graph over the rows of ``x`` (a Matrix or 2-D array)"""
    data = np.asarray(getattr(x, "data", x), dtype=np.float64)
    n = data.shape[0]
    if k < 1 or k >= n:
        raise GraphError(f"k-NN graph needs 1 <= k < N, got k={k} and N={n}")

    distances = cdist(data, data, metric="sqeuclidean")
    np.fill_diagonal(distances, np.inf)
    # stable sort keeps ascending index order among equal distances
    neighbors = np.argsort(distances, axis=1, kind="stable")[:, :k]
    neighbors.flags.writeable = False
    return NeighborGraph(n_nodes=n, k=k, neighbors=neighbors, self_loops=self_loops)


def undirected_edge_set(graph):
    """Pairs (i, j), i < j, joined by a k-NN relation in either direction"""
    edges = set()
    for i, row in enumerate(graph.neighbors):
        for j in row:
            j = int(j)
            if j != i:
                edges.add((min(i, j), max(i, j)))
    return edges


def write_edge_csv(graph, path):
    """Debug dump of the undirected edge set as ``i,j`` rows; returns the edge count"""
    edges = sorted(undirected_edge_set(graph))
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["i", "j"])
        writer.writerows(edges)
    logger.debug("wrote %d edges over %d nodes to %s", len(edges), graph.n_nodes, path)
    return len(edges)


@dataclass(frozen=True)
class ContextBatch:
    rows: np.ndarray  # row indices fed to the graph, scored rows first
    n_scored: int


def context_batches(n_rows, batch_size, k):
    """
    Sequential batches for inference passes.

    A final batch with fewer than k+1 rows is padded with trailing rows of the
    previous batch; padding rows only provide graph context and are not scored.
    """
    if n_rows == 0:
        return
    if batch_size <= k:
        raise GraphError(f"batch size {batch_size} must exceed k={k}")
    if n_rows <= k:
        raise GraphError(f"need at least k+1={k + 1} rows to build a graph, got {n_rows}")

    for start in range(0, n_rows, batch_size):
        stop = min(start + batch_size, n_rows)
        rows = np.arange(start, stop)
        if len(rows) <= k:
            pad = np.arange(start - (k + 1 - len(rows)), start)
            yield ContextBatch(rows=np.concatenate([rows, pad]), n_scored=len(rows))
        else:
            yield ContextBatch(rows=rows, n_scored=len(rows))
