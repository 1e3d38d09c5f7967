"""Deterministic weight generator (SplitMix64-style, vectorized).

Models without weight files get reproducible int8 weights derived from a
64-bit seed. Per-layer substreams are keyed by (seed, layer index) so that
inserting or editing one layer never shifts another layer's weights.
"""

from __future__ import annotations

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

DEFAULT_SEED = 0x5EED


_MASK = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    # 64-bit finalizer; numpy uint64 ops wrap mod 2**64 as required
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def layer_seed(seed: int, layer_index: int) -> int:
    """Substream seed for one layer."""
    z = (seed + int(_GAMMA) * (layer_index + 1)) & _MASK
    z = ((z ^ (z >> 30)) * int(_MIX1)) & _MASK
    z = ((z ^ (z >> 27)) * int(_MIX2)) & _MASK
    return z ^ (z >> 31)


def int8_block(seed: int, count: int) -> np.ndarray:
    """``count`` int8 values uniform on [-128, 127] from ``seed``."""
    if count == 0:
        return np.zeros(0, dtype=np.int8)
    words = (count + 7) // 8
    with np.errstate(over="ignore"):
        idx = np.arange(1, words + 1, dtype=np.uint64)
        state = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + idx * _GAMMA
        mixed = _mix(state)
    data = mixed.view(np.uint8)[:count]
    # byte - 128 covers [-128, 127] exactly once each
    return (data.astype(np.int16) - 128).astype(np.int8)
