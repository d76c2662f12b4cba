"""Seeded random streams.

Every stream in the package is a ``numpy.random.Generator`` driven by the
Philox4x64 counter-based bit generator. Normal variates are produced by an
explicit Box-Muller transform over ``Generator.random`` so the draw order is
fixed by this module rather than by numpy's internal normal sampler.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed) -> np.random.Generator:
    """Return a Philox-backed generator for an integer seed or SeedSequence."""
    return np.random.Generator(np.random.Philox(seed))


def derive_seed(*keys: int) -> int:
    """Hash a tuple of non-negative integers into a 63-bit seed."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(1, np.uint64)[0]
    return int(state >> np.uint64(1))


def box_muller(u1: np.ndarray, u2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map uniforms on [0, 1) to two independent standard normal arrays.

    ``u1`` is reflected to (0, 1] so the logarithm is always finite.
    """
    r = np.sqrt(-2.0 * np.log1p(-u1))
    theta = 2.0 * np.pi * u2
    return r * np.cos(theta), r * np.sin(theta)


def standard_normal(rng: np.random.Generator, size) -> np.ndarray:
    """Draw standard normals; pair k consumes uniforms 2k and 2k+1.

    Both Box-Muller outputs are used, interleaved as (cos_0, sin_0, cos_1, ...).
    """
    shape = (size,) if np.isscalar(size) else tuple(size)
    n = int(np.prod(shape))
    pairs = (n + 1) // 2
    u = rng.random((pairs, 2))
    z0, z1 = box_muller(u[:, 0], u[:, 1])
    return np.column_stack((z0, z1)).ravel()[:n].reshape(shape)
