"""
GRAPH CORE
Sparse undirected graphs, partitions, connected components and partition-driven coarsening.

Adjacency is kept as a symmetric CSR array. Weighted graphs may carry self-loops; a self-loop of
weight w is stored as 2w on the diagonal so that row sums are weighted degrees and modularity is
preserved when a graph is coarsened.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from .errors import InputError

logger = logging.getLogger(__name__)

PairsLike = Union[Sequence[Tuple[int, int]], np.ndarray]


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph in compressed adjacency form (neighbor lists sorted ascending)."""

    adj: sp.csr_array
    weighted: bool = False
    ingest_stats: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.adj.ndim != 2 or self.adj.shape[0] != self.adj.shape[1]:
            raise InputError(f"adjacency must be square, got shape {self.adj.shape}")

    @property
    def n(self) -> int:
        return int(self.adj.shape[0])

    @property
    def indptr(self) -> np.ndarray:
        return self.adj.indptr

    @property
    def indices(self) -> np.ndarray:
        return self.adj.indices

    @property
    def num_edges(self) -> int:
        """Number of distinct undirected edges, self-loops included."""
        n_diag = int(np.count_nonzero(self.adj.diagonal()))
        return (int(self.adj.nnz) - n_diag) // 2 + n_diag

    @property
    def total_weight(self) -> float:
        """Total edge weight (|E| for unweighted graphs)."""
        return float(self.adj.data.sum()) / 2.0

    def neighbors(self, i: int) -> np.ndarray:
        return self.adj.indices[self.adj.indptr[i]:self.adj.indptr[i + 1]]

    def self_loops(self) -> np.ndarray:
        return self.adj.diagonal() / 2.0

    def edges(self) -> np.ndarray:
        """Each non-loop undirected edge once as an (m, 2) array with i < j, in CSR order."""
        rows = np.repeat(np.arange(self.n, dtype=np.int64), np.diff(self.adj.indptr))
        cols = self.adj.indices.astype(np.int64)
        upper = cols > rows
        return np.column_stack((rows[upper], cols[upper]))

    def edge_weights(self) -> np.ndarray:
        """Weights aligned with :meth:`edges`."""
        rows = np.repeat(np.arange(self.n, dtype=np.int64), np.diff(self.adj.indptr))
        return self.adj.data[self.adj.indices > rows].astype(np.float64)

    def subgraph(self, nodes: np.ndarray) -> "Graph":
        """Induced subgraph on ``nodes``; local id i corresponds to the i-th smallest node id."""
        nodes = np.unique(np.asarray(nodes, dtype=np.int64))
        sub = sp.csr_array(self.adj[nodes, :][:, nodes])
        sub.sort_indices()
        return Graph(adj=sub, weighted=self.weighted)

    def is_symmetric(self) -> bool:
        diff = self.adj - self.adj.T
        return diff.count_nonzero() == 0


@dataclass(frozen=True, eq=False)
class Partition:
    """Node-to-block assignment with K blocks, each occupied by at least one node."""

    assign: np.ndarray
    k: int

    def __post_init__(self):
        assign = np.asarray(self.assign, dtype=np.int64)
        if assign.ndim != 1:
            raise InputError("partition assignment must be one-dimensional")
        k = int(self.k)
        if assign.size:
            if k < 1:
                raise InputError(f"partition needs K >= 1, got {k}")
            if assign.min() < 0 or assign.max() >= k:
                raise InputError(f"block ids must lie in [0, {k})")
            if np.bincount(assign, minlength=k).min() == 0:
                raise InputError("every block id must be occupied by at least one node")
        assign = assign.copy()
        assign.setflags(write=False)
        object.__setattr__(self, "assign", assign)
        object.__setattr__(self, "k", k)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Partition):
            return NotImplemented
        return self.k == other.k and np.array_equal(self.assign, other.assign)

    def __hash__(self):
        return hash((self.k, self.assign.tobytes()))

    @property
    def n(self) -> int:
        return int(self.assign.size)

    @classmethod
    def from_labels(cls, labels: Sequence[int]) -> "Partition":
        """Compact arbitrary labels to [0, K), preserving the relative order of label values."""
        uniq, inverse = np.unique(np.asarray(labels), return_inverse=True)
        return cls(inverse.reshape(-1).astype(np.int64), len(uniq))

    @classmethod
    def singletons(cls, n: int) -> "Partition":
        return cls(np.arange(n, dtype=np.int64), max(n, 1))

    @classmethod
    def single_block(cls, n: int) -> "Partition":
        return cls(np.zeros(n, dtype=np.int64), 1)

    def canonical(self) -> "Partition":
        """Relabel blocks in order of their first node."""
        return Partition(_first_occurrence_labels(self.assign), self.k)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assign, minlength=self.k)

    def blocks(self) -> List[np.ndarray]:
        order = np.argsort(self.assign, kind="stable")
        return np.split(order, np.cumsum(self.sizes())[:-1])

    def indicator(self) -> sp.csr_array:
        """Sparse N x K membership matrix H with H[i, r] = 1 iff node i is in block r."""
        ones = np.ones(self.n, dtype=np.float64)
        return sp.csr_array((ones, (np.arange(self.n), self.assign)), shape=(self.n, self.k))

    def is_refinement_of(self, other: "Partition") -> bool:
        """True when every block of ``self`` lies inside a single block of ``other``."""
        if other.n != self.n:
            raise InputError(f"partition sizes differ: {self.n} vs {other.n}")
        joint = self.assign * np.int64(other.k) + other.assign
        return len(np.unique(joint)) == self.k


@dataclass(frozen=True, eq=False)
class SuperGraph:
    """Weighted coarse graph with one super-node per block of a fine partition."""

    coarse: Graph
    block_of: np.ndarray
    self_loop_counts: np.ndarray

    @property
    def n_super(self) -> int:
        return self.coarse.n

    def self_loop(self, r: int):
        return self.self_loop_counts[r]

    def weight(self, r: int, s: int) -> float:
        if r == s:
            return float(self.self_loop_counts[r])
        return float(self.coarse.adj[r, s])


def _first_occurrence_labels(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size == 0:
        return labels.astype(np.int64)
    uniq, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty(len(uniq), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(uniq), dtype=np.int64)
    return rank[inverse.reshape(-1)]


def _symmetric_csr(rows: np.ndarray, cols: np.ndarray, data: np.ndarray, n: int) -> sp.csr_array:
    off = rows != cols
    all_rows = np.concatenate((rows, cols[off]))
    all_cols = np.concatenate((cols, rows[off]))
    all_data = np.concatenate((data, data[off]))
    adj = sp.coo_array((all_data, (all_rows, all_cols)), shape=(n, n)).tocsr()
    adj.sum_duplicates()
    adj.eliminate_zeros()
    adj.sort_indices()
    return sp.csr_array(adj)


def from_edge_list(pairs: PairsLike, n_hint: Optional[int] = None) -> Graph:
    """Build a simple undirected graph from node pairs.

    Duplicate pairs (in either orientation) are merged and self-loops dropped; the dropped
    counts are logged and kept in ``Graph.ingest_stats``.
    """
    arr = np.asarray(pairs, dtype=np.int64)
    if arr.size == 0:
        if n_hint is None:
            raise InputError("empty edge list needs an explicit node count")
        arr = arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InputError(f"expected (m, 2) node pairs, got shape {arr.shape}")
    if (arr < 0).any():
        raise InputError("node ids must be non-negative")

    max_id = int(arr.max()) + 1 if arr.size else 0
    if n_hint is None:
        n = max_id
    else:
        n = int(n_hint)
        if n < max_id:
            raise InputError(f"n_hint={n} is smaller than max id + 1 = {max_id}")

    lo = np.minimum(arr[:, 0], arr[:, 1])
    hi = np.maximum(arr[:, 0], arr[:, 1])
    loops = lo == hi
    lo, hi = lo[~loops], hi[~loops]
    keys = np.unique(lo * np.int64(max(n, 1)) + hi)
    dropped_loops = int(loops.sum())
    dropped_dups = int(lo.size - keys.size)
    if dropped_loops or dropped_dups:
        logger.debug(f"Edge list cleanup: dropped {dropped_dups} duplicates, {dropped_loops} self-loops")

    lo, hi = keys // max(n, 1), keys % max(n, 1)
    adj = _symmetric_csr(lo, hi, np.ones(lo.size, dtype=np.float64), n)
    return Graph(adj=adj, weighted=False,
                 ingest_stats={"duplicates": dropped_dups, "self_loops": dropped_loops})


def from_weighted_edges(src: np.ndarray, dst: np.ndarray, weight: np.ndarray, n: int) -> Graph:
    """Build a weighted undirected graph; repeated pairs are summed, (u, u, w) is a self-loop of weight w."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    weight = np.asarray(weight, dtype=np.float64)
    if not (src.shape == dst.shape == weight.shape):
        raise InputError("src, dst and weight must have equal lengths")
    if src.size and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= n):
        raise InputError(f"node ids must lie in [0, {n})")
    if (weight < 0).any() or not np.isfinite(weight).all():
        raise InputError("edge weights must be finite and non-negative")
    data = np.where(src == dst, 2.0 * weight, weight)
    return Graph(adj=_symmetric_csr(src, dst, data, n), weighted=True)


def degrees(g: Graph) -> np.ndarray:
    """Weighted degrees d_i = sum_j A_ij (self-loops count twice)."""
    return np.asarray(g.adj.sum(axis=1), dtype=np.float64).reshape(-1)


def connected_components(g: Graph) -> Partition:
    """Connected components as blocks, numbered by first-visited node from node 0 upward."""
    if g.n == 0:
        return Partition(np.zeros(0, dtype=np.int64), 0)
    k, labels = csgraph.connected_components(sp.csr_matrix(g.adj), directed=False)
    return Partition(_first_occurrence_labels(labels), int(k))


def coarsen(g: Graph, p: Partition) -> SuperGraph:
    """Merge every block of ``p`` into a super-node.

    Between-block edge counts become super-edge weights; within-block edge counts become
    self-loops, so weighted modularity on the super-graph equals modularity on ``g``.
    """
    if p.n != g.n:
        raise InputError(f"partition covers {p.n} nodes but graph has {g.n}")
    if g.weighted:
        adj = g.adj
    else:
        adj = g.adj.astype(np.int64)
    h = p.indicator().astype(adj.dtype)
    coarse = sp.csr_array(h.T @ adj @ h)
    coarse.sum_duplicates()
    coarse.eliminate_zeros()
    coarse.sort_indices()

    diag = coarse.diagonal()
    self_loop_counts = diag // 2 if np.issubdtype(diag.dtype, np.integer) else diag / 2.0
    coarse_graph = Graph(adj=sp.csr_array(coarse.astype(np.float64)), weighted=True)
    return SuperGraph(coarse=coarse_graph, block_of=p.assign.copy(), self_loop_counts=self_loop_counts)


def project_partition(sg: SuperGraph, coarse_p: Partition) -> Partition:
    """Lift a partition of the super-nodes back to the fine graph."""
    if coarse_p.n != sg.n_super:
        raise InputError(f"coarse partition covers {coarse_p.n} nodes, super-graph has {sg.n_super}")
    return Partition(coarse_p.assign[sg.block_of], coarse_p.k)
