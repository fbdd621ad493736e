"""
blockpart: pre-trained pair-classification graph partitioning with super-graph refinement.
"""

from .errors import BlockpartError
from .graph import Graph, Partition, SuperGraph, coarsen, connected_components, from_edge_list
from .infer import derive_partition, generalize_and_refine, stream_partition
from .metrics import evaluate, modularity
from .model import ModelCheckpoint, ModelConfig, load_checkpoint, save_checkpoint
from .refine import RefinerConfig, refine_from_coarse, refine_from_scratch, refine_weighted
from .sbmgen import GeneratorParams, generate, snowball_split

__version__ = "0.1.0"

__all__ = [
    "BlockpartError",
    "Graph",
    "GeneratorParams",
    "ModelCheckpoint",
    "ModelConfig",
    "Partition",
    "RefinerConfig",
    "SuperGraph",
    "coarsen",
    "connected_components",
    "derive_partition",
    "evaluate",
    "from_edge_list",
    "generalize_and_refine",
    "generate",
    "load_checkpoint",
    "modularity",
    "refine_from_coarse",
    "refine_from_scratch",
    "refine_weighted",
    "save_checkpoint",
    "snowball_split",
    "stream_partition",
]
