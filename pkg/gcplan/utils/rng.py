"""Deterministic seed derivation and counter-based random streams.

Every stochastic step draws from a Philox generator whose key is derived
from the run seed and a label, so results do not depend on evaluation
order or worker count.
"""
import hashlib

import numpy as np
from scipy.special import ndtri

_MASK64 = (1 << 64) - 1


def derive_seed(seed: int, *labels) -> int:
    """Derive a child 64-bit seed from a parent seed and a label path."""
    payload = repr((int(seed) & _MASK64,) + tuple(str(label) for label in labels))
    digest = hashlib.sha256(payload.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def philox_stream(key: int, counter: int) -> np.random.Generator:
    """Generator over the stream identified by (key, counter)."""
    bit_generator = np.random.Philox(key=np.array([key & _MASK64, counter & _MASK64], dtype=np.uint64))
    return np.random.Generator(bit_generator)


def step_uniforms(key: int, step: int, count: int) -> np.ndarray:
    """Uniforms in [0, 1) where entry k belongs to sample k at the given step."""
    return philox_stream(key, step).random(count)


def latent_normals(key: int, count: int, dims: int = 2) -> np.ndarray:
    """Standard normal draws where row k depends only on (key, k)."""
    uniforms = philox_stream(key, 0).random((count, dims))
    return ndtri(np.clip(uniforms, 1e-12, 1.0 - 1e-12))


def record_rng(seed: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *labels))
