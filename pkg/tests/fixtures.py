"""
Shared fixtures and brute-force oracles for the test suite.
"""

import itertools
import os
import sys

import numpy as np

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from blockpart.graph import Graph, Partition, from_edge_list  # noqa: E402

SLOW = os.environ.get("BLOCKPART_RUN_SLOW") == "1"

# Running example: dense groups {0,1,2,3} and {4,5,6}, pairs {7,8} and {9,10}.
RUNNING_EXAMPLE_EDGES = [
    (0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3),
    (4, 5), (4, 6), (5, 6),
    (7, 8), (9, 10),
    (2, 4), (3, 4), (3, 5),
    (6, 7), (8, 9), (0, 10),
]
RUNNING_EXAMPLE_BLOCKS = [0, 0, 0, 0, 1, 1, 1, 2, 2, 3, 3]


def triangle() -> Graph:
    return from_edge_list([(0, 1), (1, 2), (0, 2)])


def two_triangles() -> Graph:
    return from_edge_list([(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)])


def running_example() -> Graph:
    return from_edge_list(RUNNING_EXAMPLE_EDGES, n_hint=11)


def running_example_partition() -> Partition:
    return Partition(np.array(RUNNING_EXAMPLE_BLOCKS), 4)


def running_example_scores(g: Graph) -> np.ndarray:
    """1 on edges inside a block of the running example, 0 elsewhere."""
    blocks = np.array(RUNNING_EXAMPLE_BLOCKS)
    edges = g.edges()
    return (blocks[edges[:, 0]] == blocks[edges[:, 1]]).astype(float)


def random_graph(rng: np.random.Generator, n: int, p: float, min_edges: int = 0) -> Graph:
    while True:
        upper = np.triu(rng.random((n, n)) < p, k=1)
        rows, cols = np.nonzero(upper)
        if rows.size >= min_edges:
            return from_edge_list(np.column_stack((rows, cols)), n_hint=n)


def random_partition(rng: np.random.Generator, n: int, k: int) -> Partition:
    return Partition.from_labels(rng.integers(0, k, size=n))


def dense_modularity(g: Graph, p: Partition) -> float:
    a = g.adj.toarray()
    d = a.sum(axis=1)
    two_m = d.sum()
    same = p.assign[:, None] == p.assign[None, :]
    return float(((a - np.outer(d, d) / two_m) * same).sum() / two_m)


def dense_projection(g: Graph, omega: np.ndarray) -> np.ndarray:
    a = g.adj.toarray()
    d = a.sum(axis=1)
    q = a - np.outer(d, d) / d.sum()
    return q @ omega


def reachability(g: Graph) -> np.ndarray:
    """Boolean reachability matrix by repeated squaring of (I + A)."""
    r = (g.adj.toarray() > 0) | np.eye(g.n, dtype=bool)
    for _ in range(max(1, int(np.ceil(np.log2(max(g.n, 2)))))):
        r = (r.astype(np.int64) @ r.astype(np.int64)) > 0
    return r


def brute_pair_counts(pred: Partition, truth: Partition):
    i, j = np.triu_indices(pred.n, k=1)
    same_pred = pred.assign[i] == pred.assign[j]
    same_truth = truth.assign[i] == truth.assign[j]
    return int((same_pred & same_truth).sum()), int(same_pred.sum()), int(same_truth.sum())


def brute_accuracy(pred: Partition, truth: Partition) -> float:
    """Best one-to-one block matching by enumerating every injective map of the smaller side."""
    table = np.zeros((pred.k, truth.k), dtype=np.int64)
    np.add.at(table, (pred.assign, truth.assign), 1)
    if pred.k < truth.k:
        table = table.T
    best = 0
    for rows in itertools.permutations(range(table.shape[0]), table.shape[1]):
        best = max(best, int(table[list(rows), range(table.shape[1])].sum()))
    return best / pred.n


def set_partitions(n: int):
    """All partitions of n nodes as restricted growth strings."""
    labels = [0] * n

    def extend(i, k):
        if i == n:
            yield np.array(labels)
            return
        for b in range(k + 1):
            labels[i] = b
            yield from extend(i + 1, max(k, b + 1))

    if n == 0:
        return
    labels[0] = 0
    yield from extend(1, 1)


def best_modularity(g: Graph) -> float:
    return max(dense_modularity(g, Partition.from_labels(lab)) for lab in set_partitions(g.n))
