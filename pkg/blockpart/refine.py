"""
PARTITION REFINEMENT
K-agnostic refinement on weighted graphs: Louvain-style local moving with recursive aggregation that
starts from a given partition, plus a file-based adapter for external refiner executables.
"""

import logging
import shlex
import subprocess
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from .errors import DomainError, InputError, RefinerError, RefinerTimeout
from .graph import Graph, Partition, coarsen, degrees, project_partition
from .io import read_partition, write_edge_list, write_partition

logger = logging.getLogger(__name__)

REFINER_KINDS = ("builtin", "external")
OOT_SECONDS = 10000.0


@dataclass(frozen=True)
class RefinerConfig:
    kind: str = "builtin"
    max_sweeps: int = 50
    min_gain: float = 1e-7
    seed: int = 0
    external_cmd_template: Optional[str] = None
    timeout_s: float = OOT_SECONDS

    def __post_init__(self):
        if self.kind not in REFINER_KINDS:
            raise InputError(f"refiner kind must be one of {REFINER_KINDS}, got {self.kind!r}")
        if self.max_sweeps < 1:
            raise InputError("max_sweeps must be >= 1")
        if not self.min_gain >= 0:
            raise InputError("min_gain must be >= 0")
        if self.kind == "external" and not self.external_cmd_template:
            raise InputError("external refiner needs external_cmd_template")
        if self.timeout_s <= 0:
            raise InputError("timeout_s must be positive")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _local_moving(g: Graph, comm: np.ndarray, order: np.ndarray, min_gain: float, max_sweeps: int) -> int:
    """Move nodes to the neighboring community of largest modularity gain; returns the move count.

    ``comm`` is updated in place. Community ids must lie in [0, n).
    """
    n = g.n
    k = degrees(g)
    m2 = float(k.sum())
    tot = np.bincount(comm, weights=k, minlength=n)
    indptr, indices, data = g.adj.indptr, g.adj.indices, g.adj.data
    total_moves = 0

    for sweep in range(max_sweeps):
        moves = 0
        for i in order:
            start, end = indptr[i], indptr[i + 1]
            if start == end:
                continue
            nbr = indices[start:end]
            w = data[start:end]
            off = nbr != i
            cands = comm[nbr[off]]
            a = comm[i]
            if cands.size == 0 or (cands == a).all():
                continue
            uniq, inv = np.unique(cands, return_inverse=True)
            w_to = np.bincount(inv.reshape(-1), weights=w[off])
            ki = k[i]
            own = np.searchsorted(uniq, a)
            w_ia = w_to[own] if own < uniq.size and uniq[own] == a else 0.0
            base = w_ia - (tot[a] - ki) * ki / m2
            gains = (w_to - tot[uniq] * ki / m2) - base
            if own < uniq.size and uniq[own] == a:
                gains[own] = 0.0
            best = int(np.argmax(gains))
            if uniq[best] != a and 2.0 * gains[best] / m2 > min_gain:
                b = uniq[best]
                tot[a] -= ki
                tot[b] += ki
                comm[i] = b
                moves += 1
        total_moves += moves
        logger.debug(f"sweep {sweep + 1}: {moves} moves")
        if moves == 0:
            break
    return total_moves


def _refine_builtin(wg: Graph, init: Partition, cfg: RefinerConfig) -> Partition:
    rng = np.random.default_rng(cfg.seed)
    graph = wg
    comm = init.assign.copy()
    mapping = np.arange(wg.n, dtype=np.int64)
    result = init
    level = 0
    while True:
        moves = _local_moving(graph, comm, rng.permutation(graph.n), cfg.min_gain, cfg.max_sweeps)
        if moves == 0:
            break
        level_p = Partition.from_labels(comm)
        result = Partition(level_p.assign[mapping], level_p.k)
        logger.debug(f"level {level}: {graph.n} nodes, {moves} moves, {level_p.k} communities")
        if level_p.k == graph.n:
            break
        sg = coarsen(graph, level_p)
        mapping = level_p.assign[mapping]
        graph = sg.coarse
        comm = np.arange(graph.n, dtype=np.int64)
        level += 1
    return result


def _refine_external(wg: Graph, init: Partition, cfg: RefinerConfig) -> Partition:
    with tempfile.TemporaryDirectory(prefix="blockpart-refine-") as tmp:
        tmp = Path(tmp)
        paths = {"graph": tmp / "graph.tsv", "init": tmp / "init.tsv", "out": tmp / "out.tsv"}
        write_edge_list(wg, paths["graph"], one_based=True)
        write_partition(init, paths["init"], one_based=True)
        cmd = [part.format(**{key: str(p) for key, p in paths.items()})
               for part in shlex.split(cfg.external_cmd_template)]
        logger.info(f"Running external refiner: {' '.join(cmd)}")
        try:
            proc = subprocess.run(cmd, capture_output=True, text=True, timeout=cfg.timeout_s)
        except subprocess.TimeoutExpired as e:
            stderr = e.stderr.decode() if isinstance(e.stderr, bytes) else (e.stderr or "")
            raise RefinerTimeout(f"external refiner exceeded {cfg.timeout_s:.0f}s", stderr=stderr) from e
        except OSError as e:
            raise RefinerError(f"cannot start external refiner: {e}") from e
        if proc.returncode != 0:
            raise RefinerError(f"external refiner exited with code {proc.returncode}",
                               stderr=proc.stderr, returncode=proc.returncode)
        try:
            return read_partition(paths["out"], n=wg.n, one_based=True)
        except InputError as e:
            raise RefinerError(f"external refiner produced an unreadable partition: {e}",
                               stderr=proc.stderr, returncode=proc.returncode) from e


def refine_weighted(wg: Graph, init: Partition, cfg: RefinerConfig) -> Partition:
    """Refine ``init`` on a (weighted) graph; the builtin kind never lowers weighted modularity."""
    if init.n != wg.n:
        raise InputError(f"initial partition covers {init.n} nodes but graph has {wg.n}")
    if wg.total_weight <= 0:
        raise DomainError("refinement needs a graph with positive total edge weight")
    if cfg.kind == "external":
        return _refine_external(wg, init, cfg)
    return _refine_builtin(wg, init, cfg)


def refine_from_coarse(g: Graph, init: Partition, cfg: RefinerConfig) -> Partition:
    """Coarsen by ``init``, refine the super-graph from singletons and project back."""
    sg = coarsen(g, init)
    logger.debug(f"Refining super-graph with {sg.n_super} super-nodes (fine N={g.n})")
    coarse_p = refine_weighted(sg.coarse, Partition.singletons(sg.n_super), cfg)
    return project_partition(sg, coarse_p)


def refine_from_scratch(g: Graph, cfg: RefinerConfig) -> Partition:
    return refine_weighted(g, Partition.singletons(g.n), cfg)
