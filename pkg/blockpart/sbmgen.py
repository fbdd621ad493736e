"""
SBM BENCHMARK GENERATOR
Degree-corrected stochastic block model graphs in the style of the Graph Challenge generator,
randomized parameter sampling for pre-training corpora, and the snowball streaming splitter.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from .errors import InputError
from .graph import Graph, Partition, from_edge_list
from .io import read_edge_list, read_partition, write_edge_list, write_partition
from .seeds import derive_seed

logger = logging.getLogger(__name__)

BLOCK_COUNT_EXPONENT = 0.35
MAX_SAMPLING_ROUNDS = 200
MANIFEST_VERSION = 1


def auto_block_count(n: int) -> int:
    """Block count growing like n^0.35 (10K -> 25, 100K -> 56, 1M -> 126)."""
    return max(1, int(round(n ** BLOCK_COUNT_EXPONENT)))


@dataclass(frozen=True)
class GeneratorParams:
    n: int
    k_target: Optional[int] = None
    within_between_ratio: float = 2.5
    size_heterogeneity: float = 3.0
    avg_degree: float = 82.0
    degree_exponent: float = 2.1
    max_degree_ratio: float = 30.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise InputError(f"n must be positive, got {self.n}")
        if self.k_target is None:
            object.__setattr__(self, "k_target", min(auto_block_count(self.n), self.n))
        if not 1 <= self.k_target <= self.n:
            raise InputError(f"need n >= k_target >= 1, got n={self.n}, k_target={self.k_target}")
        if self.within_between_ratio <= 0:
            raise InputError("within_between_ratio must be positive")
        if self.size_heterogeneity < 1:
            raise InputError("size_heterogeneity must be >= 1")
        if self.avg_degree < 0 or self.avg_degree * self.n / 2 > self.n * (self.n - 1) / 2:
            raise InputError(f"avg_degree={self.avg_degree} is infeasible for n={self.n}")
        if self.degree_exponent <= 0 or self.max_degree_ratio < 1:
            raise InputError("degree_exponent must be positive and max_degree_ratio >= 1")

    @classmethod
    def hardest(cls, n: int, seed: int = 0, avg_degree: float = 82.0) -> "GeneratorParams":
        """Hardest benchmark setting: within/between ratio 2.5, block-size heterogeneity 3."""
        return cls(n=n, within_between_ratio=2.5, size_heterogeneity=3.0, avg_degree=avg_degree, seed=seed)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class ParamRanges:
    """Per-field sampling intervals; n and avg_degree are drawn log-uniformly."""

    n: Tuple[int, int] = (200, 5000)
    within_between_ratio: Tuple[float, float] = (1.5, 5.0)
    size_heterogeneity: Tuple[float, float] = (1.0, 4.0)
    avg_degree: Tuple[float, float] = (8.0, 96.0)
    degree_exponent: Tuple[float, float] = (1.8, 3.0)
    max_degree_ratio: Tuple[float, float] = (10.0, 30.0)
    k_target: Optional[Tuple[int, int]] = None
    density_cap: float = 0.05

    def __post_init__(self):
        for name in ("n", "within_between_ratio", "size_heterogeneity", "avg_degree",
                     "degree_exponent", "max_degree_ratio", "k_target"):
            interval = getattr(self, name)
            if interval is None:
                continue
            lo, hi = interval
            if lo > hi:
                raise InputError(f"inverted interval for {name}: ({lo}, {hi})")
        if self.n[0] < 1 or self.avg_degree[0] <= 0:
            raise InputError("n and avg_degree intervals must be positive")


@dataclass(frozen=True)
class StreamSchedule:
    T: int
    node_batches: List[np.ndarray]


@dataclass(frozen=True)
class StreamStep:
    """Cumulative snapshot: ``nodes`` are sorted global ids, local id i is ``nodes[i]``."""

    t: int
    nodes: np.ndarray
    graph: Graph
    truth: Optional[Partition] = None


def _truncated_power_law(rng: np.random.Generator, size: int, lo: float, hi: float,
                         exponent: float) -> np.ndarray:
    """Inverse-CDF samples from p(x) ~ x^-exponent on [lo, hi]."""
    u = rng.random(size)
    if hi <= lo:
        return np.full(size, lo, dtype=np.float64)
    if abs(exponent - 1.0) < 1e-12:
        return lo * (hi / lo) ** u
    a = 1.0 - exponent
    return (lo ** a + u * (hi ** a - lo ** a)) ** (1.0 / a)


def _allocate(n: int, weights: np.ndarray) -> np.ndarray:
    """Split n nodes into len(weights) blocks proportional to weights, every block non-empty."""
    raw = n * weights / weights.sum()
    sizes = np.maximum(1, np.floor(raw).astype(np.int64))
    diff = n - int(sizes.sum())
    order = np.argsort(-(raw - sizes), kind="stable")
    while diff > 0:
        bump = order[:min(diff, len(order))]
        sizes[bump] += 1
        diff -= len(bump)
    while diff < 0:
        sizes[int(np.argmax(sizes))] -= 1
        diff += 1
    return sizes


def _block_sizes(params: GeneratorParams, rng: np.random.Generator) -> np.ndarray:
    k = params.k_target
    weights = _truncated_power_law(rng, k, 1.0, params.size_heterogeneity, 1.0)
    if k >= 2:
        weights[int(np.argmin(weights))] = 1.0
        weights[int(np.argmax(weights))] = params.size_heterogeneity
    return _allocate(params.n, weights)


class _PropensitySampler:
    """Draws nodes proportional to degree propensity, globally or inside one block."""

    def __init__(self, theta: np.ndarray, assign: np.ndarray, k: int):
        self.order = np.argsort(assign, kind="stable")
        self.cum = np.cumsum(theta[self.order])
        sizes = np.bincount(assign, minlength=k)
        self.end = np.cumsum(sizes)
        self.start = self.end - sizes
        self.before = np.where(self.start > 0, self.cum[np.maximum(self.start - 1, 0)], 0.0)
        self.mass = self.cum[self.end - 1] - self.before
        self.global_cum = np.cumsum(theta)

    def within(self, rng: np.random.Generator, blocks: np.ndarray) -> np.ndarray:
        u = self.before[blocks] + rng.random(blocks.size) * self.mass[blocks]
        pos = np.searchsorted(self.cum, u, side="right")
        pos = np.clip(pos, self.start[blocks], self.end[blocks] - 1)
        return self.order[pos]

    def anywhere(self, rng: np.random.Generator, size: int) -> np.ndarray:
        u = rng.random(size) * self.global_cum[-1]
        return np.minimum(np.searchsorted(self.global_cum, u, side="right"), self.global_cum.size - 1)


def _collect_unique(draw, target: int, n: int, rng: np.random.Generator, kind: str) -> np.ndarray:
    keys = np.zeros(0, dtype=np.int64)
    for _ in range(MAX_SAMPLING_ROUNDS):
        need = target - keys.size
        if need <= 0:
            break
        u, v = draw(int(need * 1.1) + 16)
        lo, hi = np.minimum(u, v), np.maximum(u, v)
        fresh = lo[lo != hi] * np.int64(n) + hi[lo != hi]
        keys = np.unique(np.concatenate((keys, fresh)))
    if keys.size < target:
        logger.warning(f"Generator reached {keys.size}/{target} {kind} edges; graph is near saturation")
    elif keys.size > target:
        keys = np.sort(rng.choice(keys, size=target, replace=False))
    return keys


def generate(params: GeneratorParams) -> Tuple[Graph, Partition]:
    """Generate a simple degree-corrected SBM graph and its ground-truth partition."""
    rng = np.random.default_rng(params.seed)
    n, k = params.n, params.k_target

    sizes = _block_sizes(params, rng)
    assign = rng.permutation(np.repeat(np.arange(k, dtype=np.int64), sizes))
    theta = _truncated_power_law(rng, n, 1.0, params.max_degree_ratio, params.degree_exponent)

    m_total = int(round(params.avg_degree * n / 2))
    ratio = params.within_between_ratio
    m_in = m_total if k == 1 else int(round(m_total * ratio / (1.0 + ratio)))
    m_out = m_total - m_in

    within_cap = int(np.sum(sizes * (sizes - 1) // 2))
    between_cap = n * (n - 1) // 2 - within_cap
    if m_in > within_cap or m_out > between_cap:
        raise InputError(f"infeasible density: need {m_in}/{m_out} within/between edges, "
                         f"capacity {within_cap}/{between_cap}")

    sampler = _PropensitySampler(theta, assign, k)
    block_mass = sampler.mass ** 2
    block_p = block_mass / block_mass.sum()

    def draw_within(size: int):
        blocks = rng.choice(k, size=size, p=block_p)
        return sampler.within(rng, blocks), sampler.within(rng, blocks)

    def draw_between(size: int):
        u = sampler.anywhere(rng, size)
        v = sampler.anywhere(rng, size)
        cross = assign[u] != assign[v]
        return u[cross], v[cross]

    within_keys = _collect_unique(draw_within, m_in, n, rng, "within-block")
    between_keys = _collect_unique(draw_between, m_out, n, rng, "between-block") if m_out else within_keys[:0]
    keys = np.concatenate((within_keys, between_keys))
    graph = from_edge_list(np.column_stack((keys // n, keys % n)), n_hint=n)

    logger.info(f"Generated SBM graph: N={n}, K={k}, |E|={graph.num_edges}, "
                f"within/between={within_keys.size}/{between_keys.size}")
    return graph, Partition(assign, k)


def _log_uniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    if lo == hi:
        return lo
    return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))


def _uniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    if lo == hi:
        return lo
    return float(rng.uniform(lo, hi))


def sample_params(ranges: ParamRanges, seed: int) -> GeneratorParams:
    """Draw generator parameters inside ``ranges``; the average degree is capped at density_cap * n."""
    rng = np.random.default_rng(seed)
    n = int(round(_log_uniform(rng, float(ranges.n[0]), float(ranges.n[1]))))
    k = None
    if ranges.k_target is not None:
        k = int(rng.integers(ranges.k_target[0], ranges.k_target[1] + 1))
    ratio = _uniform(rng, *ranges.within_between_ratio)
    het = _uniform(rng, *ranges.size_heterogeneity)
    deg_lo, deg_hi = ranges.avg_degree
    avg_degree = _log_uniform(rng, deg_lo, max(deg_lo, min(deg_hi, ranges.density_cap * n)))
    exponent = _uniform(rng, *ranges.degree_exponent)
    spread = _uniform(rng, *ranges.max_degree_ratio)
    gen_seed = int(rng.integers(0, 2 ** 63 - 1))
    return GeneratorParams(n=n, k_target=k, within_between_ratio=ratio, size_heterogeneity=het,
                           avg_degree=avg_degree, degree_exponent=exponent,
                           max_degree_ratio=spread, seed=gen_seed)


def generate_corpus(m: int, ranges: Optional[ParamRanges] = None,
                    seed: int = 0) -> List[Tuple[Graph, Partition, GeneratorParams]]:
    """Pre-training corpus of ``m`` generated graphs with sampled parameters."""
    ranges = ranges or ParamRanges()
    corpus = []
    for i in range(m):
        params = sample_params(ranges, derive_seed(seed, "corpus", i))
        graph, truth = generate(params)
        corpus.append((graph, truth, params))
    return corpus


def _snowball_order(g: Graph, rng: np.random.Generator) -> np.ndarray:
    adj = sp.csr_matrix(g.adj)
    visited = np.zeros(g.n, dtype=bool)
    pieces = []
    for root in rng.permutation(g.n):
        if visited[root]:
            continue
        reached = csgraph.breadth_first_order(adj, int(root), directed=False, return_predecessors=False)
        visited[reached] = True
        pieces.append(reached)
    return np.concatenate(pieces) if pieces else np.zeros(0, dtype=np.int64)


def snowball_split(g: Graph, truth: Optional[Partition], T: int,
                   seed: int) -> Tuple[StreamSchedule, List[StreamStep]]:
    """Split nodes into T snowball batches and expose each cumulative induced subgraph.

    Batches follow breadth-first expansion from a seeded random root; when a component is
    exhausted the next root is drawn from the unvisited nodes.
    """
    if not 1 <= T <= g.n:
        raise InputError(f"need 1 <= T <= N, got T={T}, N={g.n}")
    if truth is not None and truth.n != g.n:
        raise InputError(f"truth covers {truth.n} nodes but graph has {g.n}")

    order = _snowball_order(g, np.random.default_rng(seed))
    cuts = [(t * g.n) // T for t in range(T + 1)]
    batches = [order[cuts[t]:cuts[t + 1]] for t in range(T)]

    steps = []
    for t in range(1, T + 1):
        nodes = np.sort(order[:cuts[t]])
        step_truth = Partition.from_labels(truth.assign[nodes]) if truth is not None else None
        steps.append(StreamStep(t=t, nodes=nodes, graph=g.subgraph(nodes), truth=step_truth))
    logger.info(f"Snowball split into {T} steps: " + ", ".join(str(s.graph.n) for s in steps))
    return StreamSchedule(T=T, node_batches=batches), steps


def write_stream_steps(steps: List[StreamStep], out_dir: Union[str, Path], one_based: bool = True) -> Path:
    """Write per-step edge lists, truths and node maps plus ``manifest.json``; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for step in steps:
        entry = {"t": step.t, "n": step.graph.n, "m": step.graph.num_edges,
                 "graph": f"step_{step.t:02d}.tsv", "nodes": f"nodes_{step.t:02d}.tsv"}
        write_edge_list(step.graph, out_dir / entry["graph"], one_based=one_based)
        np.savetxt(out_dir / entry["nodes"], step.nodes + (1 if one_based else 0), fmt="%d")
        if step.truth is not None:
            entry["truth"] = f"truth_{step.t:02d}.tsv"
            write_partition(step.truth, out_dir / entry["truth"], one_based=one_based)
        entries.append(entry)
    manifest = {"version": MANIFEST_VERSION, "one_based": one_based, "steps": entries}
    path = out_dir / "manifest.json"
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2)
    return path


def read_stream_manifest(path: Union[str, Path]) -> List[StreamStep]:
    path = Path(path)
    try:
        with open(path, "r") as f:
            manifest = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"cannot read stream manifest {path}: {e}") from e
    if manifest.get("version") != MANIFEST_VERSION:
        raise InputError(f"unsupported stream manifest version {manifest.get('version')}")
    one_based = bool(manifest.get("one_based", True))
    steps = []
    for entry in manifest["steps"]:
        graph = read_edge_list(path.parent / entry["graph"], one_based=one_based, n_hint=entry["n"])
        nodes = np.atleast_1d(np.loadtxt(path.parent / entry["nodes"], dtype=np.int64)) - (1 if one_based else 0)
        truth = None
        if "truth" in entry:
            truth = read_partition(path.parent / entry["truth"], n=entry["n"], one_based=one_based)
        steps.append(StreamStep(t=int(entry["t"]), nodes=nodes, graph=graph, truth=truth))
    return steps
