"""
OFFLINE PRE-TRAINING
Labeled pair sampling, the combined BCE + modularity loss, analytic backpropagation through the
classifier heads, the row normalization, the fixed propagation map and the feature MLP, the
Adam training loop over a corpus of small generated graphs, and the post-training tau calibration.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.special import expit
from tqdm import tqdm

from .errors import InputError, NumericError, SamplingError, TrainingError
from .graph import Graph, Partition, connected_components, degrees, from_edge_list
from .metrics import purity
from .model import (
    HEADS,
    TAU_SCALE_KEY,
    ModelCheckpoint,
    ModelConfig,
    embed,
    init_checkpoint,
    mlp_forward,
    normalize_rows,
    pair_terms,
    propagation_matrix,
    random_projection,
)
from .seeds import derive_seed

logger = logging.getLogger(__name__)

BCE_EPS = 1e-7
MODULARITY_LOSS = "pairwise relaxation: -lambda/(2|E|) * sum_s Q_s * y_s"
MAX_SAMPLING_ROUNDS = 50
SCALE_BOUNDS = (1e-6, 1e6)

GradientSet = Dict[str, np.ndarray]


@dataclass(frozen=True)
class TrainHyper:
    epochs: int = 50
    learning_rate: float = 1e-3
    neg_ratio: float = 1.0
    lambda_mod: float = 1.0
    seed: int = 0
    max_edges_per_graph: int = 20000
    hard_neg_weight: float = 4.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise InputError("epochs must be >= 1")
        if self.learning_rate < 0 or self.neg_ratio < 0 or self.lambda_mod < 0:
            raise InputError("learning_rate, neg_ratio and lambda_mod must be non-negative")
        if self.max_edges_per_graph < 1:
            raise InputError("max_edges_per_graph must be >= 1")
        if self.hard_neg_weight <= 0:
            raise InputError("hard_neg_weight must be positive")


@dataclass(frozen=True, eq=False)
class TrainBatch:
    """Labeled node pairs of one graph; ``q_vals`` holds Q_ij = A_ij - d_i d_j / 2|E| per pair.

    ``weights`` scale each pair's BCE term (all ones when omitted).
    """

    graph: Graph
    pairs: np.ndarray
    labels: np.ndarray
    q_vals: np.ndarray
    two_m: float
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        if not (len(self.pairs) == len(self.labels) == len(self.q_vals)):
            raise InputError("pairs, labels and q_vals must have equal lengths")
        if self.weights is None:
            object.__setattr__(self, "weights", np.ones(len(self.labels)))
        elif len(self.weights) != len(self.labels) or (np.asarray(self.weights) <= 0).any():
            raise InputError("weights must be positive, one per pair")

    @property
    def size(self) -> int:
        return int(len(self.labels))


@dataclass(frozen=True, eq=False)
class GraphContext:
    """Parameter-independent pieces of the forward pass: projected features and propagation map."""

    x: np.ndarray
    prop: sp.csr_array
    depth: int


@dataclass
class ForwardCache:
    feature_inputs: List[np.ndarray]
    z: np.ndarray
    z_tilde: np.ndarray
    norms: np.ndarray
    zero: np.ndarray
    head_inputs: Dict[str, List[np.ndarray]]
    h: Dict[str, np.ndarray]
    cos: np.ndarray
    u: np.ndarray
    tau: np.ndarray
    y_hat: np.ndarray


def _draw_unique(rng: np.random.Generator, draw, count: int, n: int, forbidden: np.ndarray) -> np.ndarray:
    keys = np.zeros(0, dtype=np.int64)
    for _ in range(MAX_SAMPLING_ROUNDS):
        need = count - keys.size
        if need <= 0:
            break
        u, v = draw(2 * need + 8)
        lo, hi = np.minimum(u, v), np.maximum(u, v)
        fresh = lo[lo != hi] * np.int64(n) + hi[lo != hi]
        fresh = fresh[~np.isin(fresh, forbidden)]
        keys = np.unique(np.concatenate((keys, fresh)))
    if keys.size > count:
        keys = np.sort(rng.choice(keys, size=count, replace=False))
    return keys


def sample_training_pairs(g: Graph, truth: Partition, neg_ratio: float, seed: int,
                          max_edges: Optional[int] = None, hard_neg_weight: float = 1.0) -> TrainBatch:
    """Edges plus as many same-block non-edges, then ``neg_ratio`` times that many cross-block pairs.

    Labels come from the truth partition (1 = same block). Cross-block edges carry BCE weight
    ``hard_neg_weight``; every other pair weighs 1.
    """
    if truth.n != g.n:
        raise InputError(f"truth covers {truth.n} nodes but graph has {g.n}")
    if neg_ratio < 0:
        raise InputError("neg_ratio must be non-negative")
    if hard_neg_weight <= 0:
        raise InputError("hard_neg_weight must be positive")
    if neg_ratio > 0 and truth.k < 2:
        raise SamplingError("cannot draw cross-block negatives from a single-block truth")
    edges = g.edges()
    if edges.shape[0] == 0:
        raise InputError("training graph has no edges")

    rng = np.random.default_rng(seed)
    n = g.n
    if max_edges is not None and edges.shape[0] > max_edges:
        edges = edges[np.sort(rng.choice(edges.shape[0], size=max_edges, replace=False))]
    edge_keys = edges[:, 0] * np.int64(n) + edges[:, 1]
    all_edge_keys = g.edges() @ np.array([n, 1], dtype=np.int64)
    assign = truth.assign

    sizes = truth.sizes()
    order = np.argsort(assign, kind="stable")
    start = np.cumsum(sizes) - sizes
    block_pairs = sizes * (sizes - 1) / 2.0

    def draw_same(size: int):
        blocks = rng.choice(truth.k, size=size, p=block_pairs / block_pairs.sum())
        u = order[start[blocks] + (rng.random(size) * sizes[blocks]).astype(np.int64)]
        v = order[start[blocks] + (rng.random(size) * sizes[blocks]).astype(np.int64)]
        return u, v

    def draw_cross(size: int):
        u = rng.integers(0, n, size=size)
        v = rng.integers(0, n, size=size)
        keep = assign[u] != assign[v]
        return u[keep], v[keep]

    same_keys = np.zeros(0, dtype=np.int64)
    if block_pairs.sum() > 0:
        same_keys = _draw_unique(rng, draw_same, edges.shape[0], n, all_edge_keys)
    n_pos = edges.shape[0] + same_keys.size
    n_neg = int(round(neg_ratio * n_pos))
    cross_keys = np.zeros(0, dtype=np.int64)
    if n_neg > 0:
        forbidden = np.unique(np.concatenate((all_edge_keys, same_keys)))
        cross_keys = _draw_unique(rng, draw_cross, n_neg, n, forbidden)
        if cross_keys.size < n_neg:
            logger.debug(f"Only {cross_keys.size}/{n_neg} distinct cross-block pairs available")

    keys = np.concatenate((edge_keys, same_keys, cross_keys))
    pairs = np.column_stack((keys // n, keys % n))
    labels = (assign[pairs[:, 0]] == assign[pairs[:, 1]]).astype(np.float64)

    d = degrees(g)
    two_m = float(d.sum())
    # edges() runs in CSR order with i < j, so its keys are sorted
    pos = np.minimum(np.searchsorted(all_edge_keys, keys), max(all_edge_keys.size - 1, 0))
    hit = all_edge_keys[pos] == keys
    a_ij = np.where(hit, g.edge_weights()[pos], 0.0)
    q_vals = a_ij - d[pairs[:, 0]] * d[pairs[:, 1]] / two_m
    weights = np.where(hit & (labels == 0), hard_neg_weight, 1.0)
    logger.debug(f"Sampled {edges.shape[0]} edges ({int((hit & (labels == 0)).sum())} cross-block), "
                 f"{same_keys.size} same-block and {cross_keys.size} cross-block pairs")
    return TrainBatch(graph=g, pairs=pairs, labels=labels, q_vals=q_vals, two_m=two_m, weights=weights)


def prepare_graph(g: Graph, config: ModelConfig) -> GraphContext:
    x = random_projection(g, config.k, config.projection_seed)
    return GraphContext(x=x, prop=propagation_matrix(g), depth=config.propagation_depth)


def _apply_prop(ctx: GraphContext, m: np.ndarray) -> np.ndarray:
    for _ in range(ctx.depth):
        m = ctx.prop @ m
    return m


def forward_train(params: Dict[str, np.ndarray], config: ModelConfig, ctx: GraphContext,
                  pairs: np.ndarray) -> ForwardCache:
    x_tilde, feature_inputs = mlp_forward(ctx.x, params, "feature", config.feature_layers,
                                          config.activation, keep=True)
    z = _apply_prop(ctx, x_tilde)
    z_tilde, norms, zero = normalize_rows(z)

    head_inputs, h = {}, {}
    for head in HEADS:
        h[head], head_inputs[head] = mlp_forward(z_tilde, params, head, config.classifier_layers,
                                                 config.activation, keep=True)
    i, j = pairs[:, 0], pairs[:, 1]
    cos = np.einsum("ij,ij->i", z_tilde[i], z_tilde[j])
    u = np.einsum("ij,ij->i", h["g_s"][i], h["g_d"][j])
    tau = np.logaddexp(0, u)
    y_hat = np.minimum(np.exp(2.0 * tau * (cos - 1.0)), 1.0)
    return ForwardCache(feature_inputs, z, z_tilde, norms, zero, head_inputs, h, cos, u, tau, y_hat)


def loss(y_hat: np.ndarray, batch: TrainBatch, lambda_mod: float) -> float:
    """Weighted-mean BCE over the batch minus lambda_mod / 2|E| times sum_s Q_s * y_s."""
    y = np.clip(y_hat, BCE_EPS, 1.0 - BCE_EPS)
    terms = batch.labels * np.log(y) + (1.0 - batch.labels) * np.log1p(-y)
    bce = -np.sum(batch.weights * terms) / np.sum(batch.weights)
    mod = np.sum(batch.q_vals * y_hat) / batch.two_m
    return float(bce - lambda_mod * mod)


def _loss_grad(y_hat: np.ndarray, batch: TrainBatch, lambda_mod: float) -> np.ndarray:
    y = np.clip(y_hat, BCE_EPS, 1.0 - BCE_EPS)
    inside = (y_hat > BCE_EPS) & (y_hat < 1.0 - BCE_EPS)
    bce = batch.weights * (-batch.labels / y + (1.0 - batch.labels) / (1.0 - y)) / np.sum(batch.weights)
    return np.where(inside, bce, 0.0) - lambda_mod * batch.q_vals / batch.two_m


def _mlp_backward(d_out: np.ndarray, params: Dict[str, np.ndarray], prefix: str, layers: int,
                  activation: str, inputs: List[np.ndarray], grads: GradientSet) -> np.ndarray:
    d = d_out
    for l in reversed(range(layers)):
        if l < layers - 1 and activation == "relu":
            d = d * (inputs[l + 1] > 0)
        grads[f"{prefix}.{l}.weight"] = inputs[l].T @ d
        grads[f"{prefix}.{l}.bias"] = d.sum(axis=0)
        d = d @ params[f"{prefix}.{l}.weight"].T
    return d


def _scatter(index: np.ndarray, weights: np.ndarray, rows: np.ndarray, n: int) -> np.ndarray:
    """sum_s weights[s] * rows[s] accumulated into row index[s] of an n-row matrix."""
    incidence = sp.csr_array((weights, (index, np.arange(index.size))), shape=(n, index.size))
    return incidence @ rows


def backward(params: Dict[str, np.ndarray], config: ModelConfig, ctx: GraphContext,
             batch: TrainBatch, cache: ForwardCache, lambda_mod: float) -> GradientSet:
    n = ctx.x.shape[0]
    i, j = batch.pairs[:, 0], batch.pairs[:, 1]
    g = _loss_grad(cache.y_hat, batch, lambda_mod) * (cache.y_hat < 1.0)
    ga = g * cache.y_hat
    d_tau = ga * 2.0 * (cache.cos - 1.0)
    d_cos = ga * 2.0 * cache.tau
    d_u = d_tau * expit(cache.u)

    h_s, h_d, zt = cache.h["g_s"], cache.h["g_d"], cache.z_tilde
    d_hs = _scatter(i, d_u, h_d[j], n)
    d_hd = _scatter(j, d_u, h_s[i], n)
    d_zt = _scatter(i, d_cos, zt[j], n) + _scatter(j, d_cos, zt[i], n)

    grads: GradientSet = {}
    d_zt += _mlp_backward(d_hs, params, "g_s", config.classifier_layers, config.activation,
                          cache.head_inputs["g_s"], grads)
    d_zt += _mlp_backward(d_hd, params, "g_d", config.classifier_layers, config.activation,
                          cache.head_inputs["g_d"], grads)

    radial = np.einsum("ij,ij->i", zt, d_zt)
    d_z = (d_zt - zt * radial[:, None]) / np.where(cache.zero, 1.0, cache.norms)[:, None]
    d_z[cache.zero] = 0.0

    d_xt = _apply_prop(ctx, d_z)
    _mlp_backward(d_xt, params, "feature", config.feature_layers, config.activation,
                  cache.feature_inputs, grads)

    for name, grad in grads.items():
        if not np.isfinite(grad).all():
            raise NumericError(f"non-finite gradient in {name}", layer=name)
    return grads


def gradients(ckpt: ModelCheckpoint, batch: TrainBatch, lambda_mod: float = 1.0,
              ctx: Optional[GraphContext] = None) -> Tuple[float, GradientSet]:
    """Loss and exact gradients of the loss with respect to every checkpoint parameter."""
    ctx = ctx or prepare_graph(batch.graph, ckpt.config)
    cache = forward_train(ckpt.params, ckpt.config, ctx, batch.pairs)
    value = loss(cache.y_hat, batch, lambda_mod)
    return value, backward(ckpt.params, ckpt.config, ctx, batch, cache, lambda_mod)


def check_gradients(ckpt: ModelCheckpoint, batch: TrainBatch, lambda_mod: float = 1.0,
                    h: float = 1e-5, names: Optional[Sequence[str]] = None) -> Dict[str, float]:
    """Relative error of analytic against central-difference gradients, per parameter block."""
    ctx = prepare_graph(batch.graph, ckpt.config)
    _, analytic = gradients(ckpt, batch, lambda_mod, ctx)
    params = {name: arr.copy() for name, arr in ckpt.params.items()}

    def objective() -> float:
        return loss(forward_train(params, ckpt.config, ctx, batch.pairs).y_hat, batch, lambda_mod)

    errors = {}
    for name in names or list(params):
        arr = params[name]
        numeric = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            saved = arr[idx]
            arr[idx] = saved + h
            up = objective()
            arr[idx] = saved - h
            down = objective()
            arr[idx] = saved
            numeric[idx] = (up - down) / (2 * h)
        scale = max(np.abs(numeric).max(), np.abs(analytic[name]).max(), 1e-8)
        errors[name] = float(np.abs(numeric - analytic[name]).max() / scale)
    return errors


class AdamState:
    def __init__(self, params: Dict[str, np.ndarray], beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {name: np.zeros_like(arr) for name, arr in params.items()}
        self.v = {name: np.zeros_like(arr) for name, arr in params.items()}
        self.t = 0

    def step(self, params: Dict[str, np.ndarray], grads: GradientSet, lr: float) -> Dict[str, np.ndarray]:
        self.t += 1
        updated = {}
        for name, arr in params.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / (1 - self.beta1 ** self.t)
            v_hat = self.v[name] / (1 - self.beta2 ** self.t)
            updated[name] = arr - lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return updated


@dataclass(frozen=True)
class CalibrationTarget:
    """Auxiliary-graph targets for the tau scale: a super-node ratio floor and a block purity floor."""

    node_ratio: float = 0.7
    purity: float = 0.995
    threshold: float = 0.5
    iterations: int = 40

    def __post_init__(self):
        if not 0 < self.node_ratio <= 1 or not 0 < self.purity <= 1:
            raise InputError("node_ratio and purity must lie in (0, 1]")
        if not 0 < self.threshold < 1:
            raise InputError(f"calibration needs a threshold in (0, 1), got {self.threshold}")
        if self.iterations < 1:
            raise InputError("iterations must be >= 1")


@dataclass(frozen=True, eq=False)
class _CalibrationGraph:
    n: int
    truth: Partition
    edges: np.ndarray
    critical: np.ndarray


def critical_scales(cos: np.ndarray, tau: np.ndarray, threshold: float) -> np.ndarray:
    """Per pair, the tau scale below which its score stays above ``threshold``.

    exp(2 s tau (c - 1)) > t  <=>  s < -ln(t) / (2 tau (1 - c)); pairs with tau (1 - c) <= 0 never drop.
    """
    gap = 2.0 * np.asarray(tau, dtype=np.float64) * (1.0 - np.asarray(cos, dtype=np.float64))
    positive = gap > 0
    return np.where(positive, -np.log(threshold) / np.where(positive, gap, 1.0), np.inf)


def _components_at(cg: _CalibrationGraph, scale: float) -> Partition:
    return connected_components(from_edge_list(cg.edges[cg.critical > scale], n_hint=cg.n))


def calibrate_tau_scale(ckpt: ModelCheckpoint, graphs: Sequence[Tuple[Graph, Partition]],
                        target: Optional[CalibrationTarget] = None) -> Tuple[float, Dict[str, Any]]:
    """Smallest tau scale whose auxiliary graphs meet ``target`` on every calibration graph.

    Raising the scale only removes auxiliary edges, so the super-node ratio and the purity of the
    components are both nondecreasing in it and a bisection on log(scale) finds the boundary.
    """
    target = target or CalibrationTarget()
    if not graphs:
        raise InputError("calibration needs at least one graph")
    prepared = []
    for g, truth in graphs:
        if truth.n != g.n:
            raise InputError(f"truth covers {truth.n} nodes but graph has {g.n}")
        if g.num_edges == 0:
            raise InputError("calibration graph has no edges")
        edges = g.edges()
        cos, tau = pair_terms(embed(g, ckpt), edges, ckpt)
        prepared.append(_CalibrationGraph(g.n, truth, edges, critical_scales(cos, tau, target.threshold)))

    def measure(log_scale: float) -> Tuple[List[float], List[float]]:
        parts = [(_components_at(cg, float(np.exp(log_scale))), cg) for cg in prepared]
        return [p.k / cg.n for p, cg in parts], [purity(p, cg.truth) for p, cg in parts]

    def meets(log_scale: float) -> bool:
        ratios, purities = measure(log_scale)
        return min(ratios) >= target.node_ratio and min(purities) >= target.purity

    lo, hi = np.log(SCALE_BOUNDS[0]), np.log(SCALE_BOUNDS[1])
    met = True
    if meets(lo):
        hi = lo
    elif not meets(hi):
        met = False
        logger.warning(f"Tau calibration cannot reach node ratio {target.node_ratio} with purity "
                       f"{target.purity}; using the largest scale {SCALE_BOUNDS[1]:g}")
    else:
        for _ in range(target.iterations):
            mid = 0.5 * (lo + hi)
            if meets(mid):
                hi = mid
            else:
                lo = mid
    scale = float(np.exp(hi))
    ratios, purities = measure(hi)
    logger.info(f"Tau scale {scale:.4g} on {len(prepared)} graphs: node ratio {np.mean(ratios):.3f}, "
                f"purity {np.mean(purities):.4f}")
    info = {
        "target": asdict(target),
        "met": met,
        "graphs": len(prepared),
        "node_ratio": [float(r) for r in ratios],
        "purity": [float(p) for p in purities],
    }
    return scale, info


def calibrate(ckpt: ModelCheckpoint, graphs: Sequence[Tuple[Graph, Partition]],
              target: Optional[CalibrationTarget] = None) -> ModelCheckpoint:
    """Checkpoint with the calibrated tau scale stored in its metadata."""
    scale, info = calibrate_tau_scale(ckpt, graphs, target)
    return ckpt.replace_params({}, **{TAU_SCALE_KEY: scale, "calibration": info})


def _prepare(index: int, graph: Graph, truth: Partition, config: ModelConfig,
             hyper: TrainHyper) -> Tuple[GraphContext, TrainBatch]:
    batch = sample_training_pairs(graph, truth, hyper.neg_ratio, derive_seed(hyper.seed, "pairs", index),
                                  max_edges=hyper.max_edges_per_graph, hard_neg_weight=hyper.hard_neg_weight)
    return prepare_graph(graph, config), batch


def pretrain(corpus: Sequence[Tuple[Graph, Partition]], config: ModelConfig, hyper: TrainHyper,
             jobs: int = 1, progress: bool = True,
             calibration: Optional[Sequence[Tuple[Graph, Partition]]] = None,
             target: Optional[CalibrationTarget] = None) -> Tuple[ModelCheckpoint, List[float]]:
    """Adam over epochs x corpus, one full-batch step per graph; returns the checkpoint and epoch-mean losses.

    The trained checkpoint is then calibrated on ``calibration`` (the corpus when omitted).
    """
    if not corpus:
        raise InputError("pre-training corpus is empty")

    logger.info(f"Preparing {len(corpus)} training graphs (jobs={jobs})")
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        futures = [pool.submit(_prepare, idx, g, truth, config, hyper) for idx, (g, truth) in enumerate(corpus)]
        prepared = [f.result() for f in futures]

    ckpt = init_checkpoint(config, derive_seed(hyper.seed, "init"))
    params = {name: arr.copy() for name, arr in ckpt.params.items()}
    adam = AdamState(params, hyper.beta1, hyper.beta2, hyper.adam_eps)
    trace: List[float] = []

    epochs = tqdm(range(hyper.epochs), desc="pretrain", disable=not progress)
    for epoch in epochs:
        losses = []
        for ctx, batch in prepared:
            cache = forward_train(params, config, ctx, batch.pairs)
            value = loss(cache.y_hat, batch, hyper.lambda_mod)
            if not np.isfinite(value):
                raise TrainingError(f"loss diverged at epoch {epoch + 1}", trace=trace + [value])
            grads = backward(params, config, ctx, batch, cache, hyper.lambda_mod)
            params = adam.step(params, grads, hyper.learning_rate)
            losses.append(value)
        trace.append(float(np.mean(losses)))
        epochs.set_postfix(loss=f"{trace[-1]:.4f}")
        logger.debug(f"Epoch {epoch + 1}/{hyper.epochs}: mean loss {trace[-1]:.6f}")

    logger.info(f"Pre-training done: loss {trace[0]:.4f} -> {trace[-1]:.4f} over {hyper.epochs} epochs")
    metadata = {
        "modularity_loss": MODULARITY_LOSS,
        "train_hyper": asdict(hyper),
        "corpus_size": len(corpus),
        "loss_trace": trace,
    }
    trained = ckpt.replace_params(params, **metadata)
    return calibrate(trained, calibration if calibration is not None else corpus, target), trace


def write_loss_trace(trace: Sequence[float], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({"epoch": np.arange(1, len(trace) + 1), "loss": list(trace)})
    frame.to_csv(path, index=False)
