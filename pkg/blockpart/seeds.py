"""
Expansion of a single run seed into independent per-component seeds.
"""

import zlib
from typing import Union

import numpy as np


def _component_key(component: Union[str, int]) -> int:
    if isinstance(component, int):
        return component
    return zlib.crc32(component.encode("utf-8"))


def derive_seed(run_seed: int, component: Union[str, int], *indices: int) -> int:
    """Derive a reproducible 63-bit seed for ``component`` (and optional indices) from ``run_seed``."""
    spawn_key = (_component_key(component),) + tuple(int(i) for i in indices)
    state = np.random.SeedSequence(entropy=int(run_seed), spawn_key=spawn_key).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1])) & ((1 << 63) - 1)
