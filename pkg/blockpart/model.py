"""
PAIR-CLASSIFICATION MODEL
Modularity random projection, feature MLP, parameter-free propagation, the g_s/g_d pair classifier
and the versioned checkpoint container.

Checkpoint byte layout (all integers little-endian):
    magic      4 bytes   b"BPCK"
    version    uint32    FORMAT_VERSION
    header_len uint32    length of the JSON header in bytes
    header     UTF-8     {"blocks": [{"name", "shape"}...], "config": {...}, "metadata": {...}}
    blocks     <f8       one row-major block per header entry, in header order
"""

import hashlib
import json
import logging
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp

from .errors import CheckpointError, CheckpointVersionError, InputError
from .graph import Graph, degrees

logger = logging.getLogger(__name__)

MAGIC = b"BPCK"
FORMAT_VERSION = 1
ACTIVATIONS = ("relu", "identity")
PRECISIONS = {"float64": np.float64, "float32": np.float32}
HEADS = ("g_s", "g_d")
TAU_SCALE_KEY = "tau_scale"


@dataclass(frozen=True)
class ModelConfig:
    """Model shape: embedding width k, feature-MLP depth, propagation depth and classifier depth."""

    k: int = 32
    feature_layers: int = 2
    propagation_depth: int = 2
    classifier_layers: int = 4
    projection_seed: int = 0
    activation: str = "relu"

    def __post_init__(self):
        if self.k < 1:
            raise InputError(f"k must be >= 1, got {self.k}")
        if min(self.feature_layers, self.propagation_depth, self.classifier_layers) < 1:
            raise InputError("all layer counts must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise InputError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def param_shapes(config: ModelConfig) -> List[Tuple[str, Tuple[int, ...]]]:
    """Parameter names and shapes in serialization order."""
    shapes = []
    for prefix, layers in (("feature", config.feature_layers),
                           ("g_s", config.classifier_layers),
                           ("g_d", config.classifier_layers)):
        for l in range(layers):
            shapes.append((f"{prefix}.{l}.weight", (config.k, config.k)))
            shapes.append((f"{prefix}.{l}.bias", (config.k,)))
    return shapes


@dataclass(frozen=True, eq=False)
class ModelCheckpoint:
    """Frozen model parameters; arrays are read-only once constructed."""

    config: ModelConfig
    params: Dict[str, np.ndarray]
    metadata: Dict[str, Any] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        expected = param_shapes(self.config)
        if set(self.params) != {name for name, _ in expected}:
            missing = sorted({name for name, _ in expected} - set(self.params))
            extra = sorted(set(self.params) - {name for name, _ in expected})
            raise CheckpointError(f"parameter set does not match config (missing={missing}, extra={extra})")
        frozen = {}
        for name, shape in expected:
            arr = np.array(self.params[name], dtype=np.float64)
            if arr.shape != shape:
                raise CheckpointError(f"{name} has shape {arr.shape}, config expects {shape}")
            if not np.isfinite(arr).all():
                raise CheckpointError(f"{name} contains non-finite values")
            arr.setflags(write=False)
            frozen[name] = arr
        object.__setattr__(self, "params", frozen)

    def replace_params(self, params: Dict[str, np.ndarray], **metadata) -> "ModelCheckpoint":
        merged = {**self.params, **params}
        return ModelCheckpoint(self.config, merged, {**self.metadata, **metadata}, self.format_version)

    def to_bytes(self) -> bytes:
        shapes = param_shapes(self.config)
        header = {
            "config": self.config.to_dict(),
            "blocks": [{"name": name, "shape": list(shape)} for name, shape in shapes],
            "metadata": self.metadata,
        }
        header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        parts = [MAGIC, struct.pack("<II", self.format_version, len(header_bytes)), header_bytes]
        for name, _ in shapes:
            parts.append(np.ascontiguousarray(self.params[name], dtype="<f8").tobytes(order="C"))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ModelCheckpoint":
        if len(data) < 12 or data[:4] != MAGIC:
            raise CheckpointVersionError("not a blockpart checkpoint (bad magic)")
        version, header_len = struct.unpack("<II", data[4:12])
        if version != FORMAT_VERSION:
            raise CheckpointVersionError(f"unsupported checkpoint version {version}, expected {FORMAT_VERSION}")
        try:
            header = json.loads(data[12:12 + header_len].decode("utf-8"))
            config = ModelConfig(**header["config"])
            blocks = header["blocks"]
        except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, InputError) as e:
            raise CheckpointVersionError(f"corrupted checkpoint header: {e}") from e

        offset = 12 + header_len
        params = {}
        for block in blocks:
            shape = tuple(block["shape"])
            count = int(np.prod(shape)) if shape else 1
            end = offset + 8 * count
            if end > len(data):
                raise CheckpointError(f"checkpoint truncated inside block {block['name']}")
            params[block["name"]] = np.frombuffer(data[offset:end], dtype="<f8").reshape(shape)
            offset = end
        if offset != len(data):
            raise CheckpointError(f"{len(data) - offset} trailing bytes after the last block")
        return cls(config, params, header.get("metadata", {}), version)

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def init_checkpoint(config: ModelConfig, seed: int = 0) -> ModelCheckpoint:
    """Fan-in scaled uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(config.k)
    params = {}
    for name, shape in param_shapes(config):
        if name.endswith(".weight"):
            params[name] = rng.uniform(-bound, bound, size=shape)
        else:
            params[name] = np.zeros(shape)
    return ModelCheckpoint(config, params, {"init_seed": int(seed)})


def save_checkpoint(ckpt: ModelCheckpoint, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(ckpt.to_bytes())
    logger.info(f"Checkpoint saved to {path} (sha256 {ckpt.digest()[:12]})")


def load_checkpoint(path: Union[str, Path]) -> ModelCheckpoint:
    path = Path(path)
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    return ModelCheckpoint.from_bytes(data)


@dataclass(frozen=True)
class Embeddings:
    """Row-normalized node embeddings; rows listed in ``zero_rows`` had zero norm and stay zero."""

    z: np.ndarray
    zero_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def n(self) -> int:
        return int(self.z.shape[0])

    @property
    def n_zero(self) -> int:
        return int(self.zero_rows.size)


@dataclass(frozen=True)
class EdgeScores:
    edges: np.ndarray
    scores: np.ndarray
    feat_s: float
    ffp_s: float
    n_zero_rows: int = 0


def _dtype(precision: str):
    try:
        return PRECISIONS[precision]
    except KeyError:
        raise InputError(f"precision must be one of {sorted(PRECISIONS)}, got {precision!r}") from None


def projection_matrix(n: int, k: int, seed: int) -> np.ndarray:
    """Gaussian Omega with entries N(0, 1/k)."""
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, k)) / np.sqrt(k)


def random_projection(g: Graph, k: int, seed: int, omega: Optional[np.ndarray] = None,
                      precision: str = "float64") -> np.ndarray:
    """X = A Omega - d (d^T Omega) / 2|E|, i.e. Q Omega without forming the dense modularity matrix."""
    dtype = _dtype(precision)
    d = degrees(g)
    two_m = float(d.sum())
    if two_m <= 0:
        raise InputError("random projection needs at least one edge")
    if omega is None:
        omega = projection_matrix(g.n, k, seed)
    omega = np.asarray(omega, dtype=dtype)
    if omega.shape != (g.n, k):
        raise InputError(f"omega has shape {omega.shape}, expected {(g.n, k)}")
    d = d.astype(dtype)
    return g.adj.astype(dtype) @ omega - np.outer(d, d @ omega) / dtype(two_m)


def mlp_forward(x: np.ndarray, params: Dict[str, np.ndarray], prefix: str, layers: int,
                activation: str = "relu", keep: bool = False) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Dense stack x -> x W + b with ReLU between layers and a linear last layer.

    With ``keep`` the input of every layer is returned for backpropagation.
    """
    inputs = []
    h = x
    for l in range(layers):
        if keep:
            inputs.append(h)
        w = params[f"{prefix}.{l}.weight"].astype(x.dtype, copy=False)
        b = params[f"{prefix}.{l}.bias"].astype(x.dtype, copy=False)
        h = h @ w + b
        if l < layers - 1 and activation == "relu":
            h = np.maximum(h, 0)
    return h, inputs


def extract_features(g: Graph, ckpt: ModelCheckpoint, omega: Optional[np.ndarray] = None,
                     precision: str = "float64") -> np.ndarray:
    cfg = ckpt.config
    x = random_projection(g, cfg.k, cfg.projection_seed, omega=omega, precision=precision)
    x_tilde, _ = mlp_forward(x, ckpt.params, "feature", cfg.feature_layers, cfg.activation)
    return x_tilde


def propagation_matrix(g: Graph, precision: str = "float64") -> sp.csr_array:
    """D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I."""
    dtype = _dtype(precision)
    a_hat = sp.csr_array(g.adj + sp.csr_array(sp.identity(g.n, format="csr")))
    a_hat.sort_indices()
    inv = 1.0 / np.sqrt(np.asarray(a_hat.sum(axis=1)).reshape(-1))
    rows = np.repeat(np.arange(g.n), np.diff(a_hat.indptr))
    data = a_hat.data * inv[rows] * inv[a_hat.indices]
    return sp.csr_array((data.astype(dtype), a_hat.indices, a_hat.indptr), shape=a_hat.shape)


def normalize_rows(z: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row l2-normalization; returns (z_tilde, norms, zero-row mask)."""
    norms = np.linalg.norm(z, axis=1)
    zero = norms <= np.finfo(z.dtype).tiny
    z_tilde = z / np.where(zero, 1.0, norms)[:, None]
    z_tilde[zero] = 0.0
    return z_tilde, norms, zero


def propagate(g: Graph, x_tilde: np.ndarray, L: int, prop: Optional[sp.csr_array] = None) -> Embeddings:
    if L < 0:
        raise InputError(f"propagation depth must be >= 0, got {L}")
    if x_tilde.shape[0] != g.n:
        raise InputError(f"feature matrix has {x_tilde.shape[0]} rows, graph has {g.n} nodes")
    z = np.asarray(x_tilde)
    if L > 0:
        prop = prop if prop is not None else propagation_matrix(g, "float32" if z.dtype == np.float32 else "float64")
        for _ in range(L):
            z = prop @ z
    z_tilde, _, zero = normalize_rows(np.array(z, copy=True))
    zero_rows = np.flatnonzero(zero)
    if zero_rows.size:
        logger.debug(f"{zero_rows.size} embedding rows have zero norm")
    return Embeddings(z=z_tilde, zero_rows=zero_rows)


def _check_pairs(pairs, n: int) -> np.ndarray:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.size and (pairs.min() < 0 or pairs.max() >= n):
        raise InputError(f"pair indices must lie in [0, {n})")
    return pairs


def tau_scale(ckpt: ModelCheckpoint) -> float:
    """Calibrated multiplier on tau stored by pre-training; 1.0 for uncalibrated checkpoints."""
    scale = float(ckpt.metadata.get(TAU_SCALE_KEY, 1.0))
    if not np.isfinite(scale) or scale <= 0:
        raise CheckpointError(f"{TAU_SCALE_KEY} must be a positive finite number, got {scale}")
    return scale


def pair_terms(emb: Embeddings, pairs, ckpt: ModelCheckpoint) -> Tuple[np.ndarray, np.ndarray]:
    """Cosine z_i . z_j and the uncalibrated tau = softplus(<g_s(z_i), g_d(z_j)>) per pair."""
    pairs = _check_pairs(pairs, emb.n)
    z = emb.z
    i, j = pairs[:, 0], pairs[:, 1]
    cos = np.einsum("ij,ij->i", z[i], z[j])
    cfg = ckpt.config
    h_s, _ = mlp_forward(z, ckpt.params, "g_s", cfg.classifier_layers, cfg.activation)
    h_d, _ = mlp_forward(z, ckpt.params, "g_d", cfg.classifier_layers, cfg.activation)
    return cos, np.logaddexp(0, np.einsum("ij,ij->i", h_s[i], h_d[j]))


def score_terms(cos: np.ndarray, tau: np.ndarray) -> np.ndarray:
    return np.minimum(np.exp(2.0 * tau * (cos - 1.0)), 1.0)


def classify_pairs(emb: Embeddings, pairs, ckpt: ModelCheckpoint,
                   tau_override: Optional[float] = None) -> np.ndarray:
    """y = exp(2 tau (z_i . z_j - 1)) with tau = s * softplus(<g_s(z_i), g_d(z_j)>).

    ``s`` is the checkpoint's calibrated tau scale; ``tau_override`` replaces tau entirely.
    """
    if tau_override is not None:
        pairs = _check_pairs(pairs, emb.n)
        cos = np.einsum("ij,ij->i", emb.z[pairs[:, 0]], emb.z[pairs[:, 1]])
        return score_terms(cos, np.full(cos.shape, tau_override, dtype=emb.z.dtype))
    cos, tau = pair_terms(emb, pairs, ckpt)
    return score_terms(cos, tau * tau.dtype.type(tau_scale(ckpt)))


def embed(g: Graph, ckpt: ModelCheckpoint, omega: Optional[np.ndarray] = None,
          precision: str = "float64") -> Embeddings:
    x_tilde = extract_features(g, ckpt, omega=omega, precision=precision)
    return propagate(g, x_tilde, ckpt.config.propagation_depth, propagation_matrix(g, precision))


def forward_edges(g: Graph, ckpt: ModelCheckpoint, precision: str = "float64",
                  omega: Optional[np.ndarray] = None, tau_override: Optional[float] = None) -> EdgeScores:
    """One forward pass scoring exactly the edge set of ``g``, timing Feat and FFP separately."""
    start = time.perf_counter()
    x_tilde = extract_features(g, ckpt, omega=omega, precision=precision)
    feat_s = time.perf_counter() - start

    start = time.perf_counter()
    emb = propagate(g, x_tilde, ckpt.config.propagation_depth, propagation_matrix(g, precision))
    edges = g.edges()
    scores = classify_pairs(emb, edges, ckpt, tau_override=tau_override)
    ffp_s = time.perf_counter() - start

    logger.debug(f"Forward pass on N={g.n}, |E|={edges.shape[0]}: feat {feat_s:.3f}s, ffp {ffp_s:.3f}s")
    return EdgeScores(edges=edges, scores=scores.astype(np.float64), feat_s=feat_s, ffp_s=ffp_s,
                      n_zero_rows=emb.n_zero)
