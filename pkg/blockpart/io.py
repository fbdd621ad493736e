"""
TSV readers and writers for edge lists and partitions.

Edge lists hold one edge per line as two whitespace-separated ids with an optional third integer
weight column (super-graph dumps). Partition files hold ``node_id<TAB>block_id``. Both default to
1-based node ids, the Graph Challenge convention.
"""

import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from .errors import InputError
from .graph import Graph, Partition, from_edge_list, from_weighted_edges

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _read_table(path: PathLike, min_cols: int, max_cols: int) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise InputError(f"file not found: {path}")
    try:
        frame = pd.read_csv(path, sep=r"\s+", header=None, comment="#", dtype=np.int64, engine="c")
    except pd.errors.EmptyDataError:
        return np.zeros((0, min_cols), dtype=np.int64)
    except (ValueError, pd.errors.ParserError) as e:
        raise InputError(f"cannot parse {path}: {e}") from e
    if not (min_cols <= frame.shape[1] <= max_cols):
        raise InputError(f"{path}: expected {min_cols}-{max_cols} columns, found {frame.shape[1]}")
    return frame.to_numpy(dtype=np.int64)


def read_edge_list(path: PathLike, one_based: bool = True, n_hint: Optional[int] = None) -> Graph:
    """Read an edge list; a third column makes the result a weighted graph."""
    table = _read_table(path, 2, 3)
    offset = 1 if one_based else 0
    ids = table[:, :2] - offset
    if ids.size and ids.min() < 0:
        raise InputError(f"{path}: node ids below {offset} for one_based={one_based}")
    if table.shape[1] == 3:
        n = int(n_hint if n_hint is not None else (ids.max() + 1 if ids.size else 0))
        return from_weighted_edges(ids[:, 0], ids[:, 1], table[:, 2].astype(np.float64), n)
    graph = from_edge_list(ids, n_hint=n_hint)
    logger.info(f"Loaded {path}: N={graph.n}, |E|={graph.num_edges}")
    return graph


def write_edge_list(g: Graph, path: PathLike, one_based: bool = True) -> None:
    """Write each undirected edge once; weighted graphs include self-loops and a weight column."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    offset = 1 if one_based else 0
    edges = g.edges()
    if g.weighted:
        loops = np.flatnonzero(g.adj.diagonal())
        src = np.concatenate((loops, edges[:, 0]))
        dst = np.concatenate((loops, edges[:, 1]))
        weight = np.concatenate((g.self_loops()[loops], g.edge_weights()))
        frame = pd.DataFrame({"src": src + offset, "dst": dst + offset,
                              "weight": np.rint(weight).astype(np.int64)})
    else:
        frame = pd.DataFrame({"src": edges[:, 0] + offset, "dst": edges[:, 1] + offset})
    frame.to_csv(path, sep="\t", header=False, index=False)


def read_partition(path: PathLike, n: Optional[int] = None, one_based: bool = True) -> Partition:
    """Read ``node<TAB>block`` lines; every node in [0, n) must appear exactly once."""
    table = _read_table(path, 2, 2)
    offset = 1 if one_based else 0
    nodes = table[:, 0] - offset
    if nodes.size and nodes.min() < 0:
        raise InputError(f"{path}: node ids below {offset} for one_based={one_based}")
    n = int(n if n is not None else (nodes.max() + 1 if nodes.size else 0))
    if nodes.size != n or len(np.unique(nodes)) != n or (nodes.size and nodes.max() >= n):
        raise InputError(f"{path}: expected every node of [0, {n}) exactly once")
    labels = np.empty(n, dtype=np.int64)
    labels[nodes] = table[:, 1]
    return Partition.from_labels(labels)


def write_partition(p: Partition, path: PathLike, one_based: bool = True) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    offset = 1 if one_based else 0
    frame = pd.DataFrame({"node": np.arange(p.n) + offset, "block": p.assign + offset})
    frame.to_csv(path, sep="\t", header=False, index=False)
