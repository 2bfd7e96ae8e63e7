"""Shared test utilities."""

import numpy as np

from qwenkit.ops import Rng


def rand_f32(rng: Rng, *shape: int) -> np.ndarray:
    """Standard-normal float32 tensor drawn from the package Rng."""
    n = int(np.prod(shape)) if shape else 1
    return rng.normals(n).astype(np.float32).reshape(shape)


def max_abs_diff(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b)))) if np.asarray(a).size else 0.0
