"""
QUALITY METRICS
Graph Challenge quality metrics (AC, ARI, pairwise precision/recall/F1) and the modularity objective.

Pair counts are exact: block-pair tallies are reduced with int64 and combined as Python integers,
which stay exact at N = 10^6 where C(N, 2) is about 5 x 10^11.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DomainError, InputError
from .graph import Graph, Partition, degrees

logger = logging.getLogger(__name__)

AC_DEFINITION = "optimal one-to-one block matching (Hungarian)"


@dataclass(frozen=True)
class QualityBlock:
    ac: float
    ari: float
    precision: float
    recall: float
    f1: float
    modularity: Optional[float]
    k_pred: int
    k_true: int

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def modularity(g: Graph, p: Partition) -> float:
    """Newman modularity via per-block sums, O(|E| + N + K); weighted graphs use weighted degrees."""
    if p.n != g.n:
        raise InputError(f"partition covers {p.n} nodes but graph has {g.n}")
    d = degrees(g)
    two_m = float(d.sum())
    if two_m <= 0:
        raise DomainError("modularity is undefined on a graph without edges")

    rows = np.repeat(np.arange(g.n, dtype=np.int64), np.diff(g.adj.indptr))
    cols = g.adj.indices
    same = p.assign[rows] == p.assign[cols]
    internal = np.bincount(p.assign[rows[same]], weights=g.adj.data[same], minlength=p.k)
    block_degree = np.bincount(p.assign, weights=d, minlength=p.k)
    return float(np.sum(internal / two_m - (block_degree / two_m) ** 2))


def _check_sizes(pred: Partition, truth: Partition) -> None:
    if pred.n != truth.n:
        raise InputError(f"partition sizes differ: {pred.n} vs {truth.n}")


def _pairs(counts: np.ndarray) -> int:
    counts = counts.astype(np.int64)
    return int(np.sum(counts * (counts - 1) // 2))


def contingency(pred: Partition, truth: Partition) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Non-zero cells of the K_pred x K_true contingency table as (rows, cols, counts)."""
    _check_sizes(pred, truth)
    joint = pred.assign * np.int64(truth.k) + truth.assign
    cells, counts = np.unique(joint, return_counts=True)
    return cells // truth.k, cells % truth.k, counts


def purity(pred: Partition, truth: Partition) -> float:
    """Fraction of nodes that share their predicted block with its majority truth block."""
    if pred.n == 0:
        raise DomainError("purity is undefined on an empty partition")
    rows, _, counts = contingency(pred, truth)
    majority = np.zeros(pred.k, dtype=np.int64)
    np.maximum.at(majority, rows, counts)
    return float(majority.sum() / pred.n)


def pair_counts(pred: Partition, truth: Partition) -> Tuple[int, int, int, int]:
    """(same-block pairs in both, pairs in pred, pairs in truth, all pairs) as exact integers."""
    _, _, cells = contingency(pred, truth)
    n = pred.n
    return _pairs(cells), _pairs(pred.sizes()), _pairs(truth.sizes()), n * (n - 1) // 2


def pairwise_prf(pred: Partition, truth: Partition) -> Tuple[float, float, float]:
    """Pairwise precision, recall and F1 over all unordered node pairs.

    Precision is 0 when ``pred`` has no same-block pair (all singletons).
    """
    tp, pred_pairs, truth_pairs, _ = pair_counts(pred, truth)
    if truth_pairs == 0:
        raise DomainError("recall is undefined when the truth partition has no same-block pair")
    precision = tp / pred_pairs if pred_pairs else 0.0
    recall = tp / truth_pairs
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) > 0 else 0.0
    return precision, recall, f1


def ari(pred: Partition, truth: Partition) -> float:
    """Adjusted Rand index from the contingency table, evaluated with exact integers."""
    index, sum_a, sum_b, total = pair_counts(pred, truth)
    # 2 * (index - E) * total and 2 * (max - E) * total with E = sum_a * sum_b / total
    numerator = 2 * (index * total - sum_a * sum_b)
    denominator = (sum_a + sum_b) * total - 2 * sum_a * sum_b
    if denominator == 0:
        return 1.0
    return numerator / denominator


def _candidate_rows(rows: np.ndarray, cols: np.ndarray, counts: np.ndarray, n_cols: int) -> np.ndarray:
    # Some optimal matching only uses, per column, one of its n_cols largest cells.
    order = np.lexsort((-counts, cols))
    sorted_cols = cols[order]
    rank = np.arange(order.size) - np.searchsorted(sorted_cols, sorted_cols, side="left")
    return np.unique(rows[order][rank < n_cols])


def matched_accuracy(pred: Partition, truth: Partition) -> float:
    """Fraction of nodes covered by an optimal one-to-one matching of predicted to true blocks."""
    rows, cols, counts = contingency(pred, truth)
    if pred.n == 0:
        return 1.0
    n_rows, n_cols = pred.k, truth.k
    if n_rows < n_cols:
        rows, cols, n_rows, n_cols = cols, rows, n_cols, n_rows
    keep = _candidate_rows(rows, cols, counts, n_cols)
    local = np.full(n_rows, -1, dtype=np.int64)
    local[keep] = np.arange(keep.size)
    table = np.zeros((keep.size, n_cols), dtype=np.int64)
    mask = local[rows] >= 0
    table[local[rows[mask]], cols[mask]] = counts[mask]
    r, c = linear_sum_assignment(table, maximize=True)
    return float(table[r, c].sum()) / pred.n


def evaluate(pred: Partition, truth: Partition, graph: Optional[Graph] = None) -> QualityBlock:
    """Full quality block; modularity is included when ``graph`` is given and has edges."""
    precision, recall, f1 = pairwise_prf(pred, truth)
    mod = None
    if graph is not None and graph.total_weight > 0:
        mod = modularity(graph, pred)
    return QualityBlock(ac=matched_accuracy(pred, truth), ari=ari(pred, truth),
                        precision=precision, recall=recall, f1=f1, modularity=mod,
                        k_pred=pred.k, k_true=truth.k)
