"""Keyed random streams and Brownian increment grids.

Every stream is derived from a ``StreamKey`` so that paths can be simulated
in any order (or in parallel) and still reproduce bit-for-bit.  Uniforms come
from numpy's counter-based Philox generator seeded through ``SeedSequence``;
normals are produced by inverse-CDF (``scipy.special.ndtri``) so the normal
algorithm does not depend on numpy's internal ziggurat tables.

Brownian increments are rounded onto a dyadic lattice (multiples of 2**-40).
Sums of lattice values are exact in binary64 for any realistic grid size, so
coarsening a grid by block sums is associative and the total of a coarsened
grid equals the total of the fine grid exactly.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

__all__ = [
    "Purpose",
    "StreamKey",
    "NoiseGrid",
    "generator",
    "uniforms",
    "standard_normal",
    "make_noise_grid",
    "make_noise_matrix",
    "coarsen",
    "coarsen_matrix",
    "LATTICE",
]

#: Resolution of the increment lattice.
LATTICE = 2.0 ** -40


class Purpose(enum.IntEnum):
    PATH_NOISE = 0
    BOOTSTRAP = 1
    OPTIMIZER_JITTER = 2
    EXACT_SAMPLE = 3


@dataclass(frozen=True)
class StreamKey:
    seed: int
    path_index: int = 0
    purpose: Purpose = Purpose.PATH_NOISE

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError(f"seed must fit in 64 bits, got {self.seed}")
        if int(self.path_index) < 0:
            raise ValueError(f"path_index must be non-negative, got {self.path_index}")
        object.__setattr__(self, "purpose", Purpose(self.purpose))

    def with_path(self, path_index: int) -> "StreamKey":
        return StreamKey(self.seed, path_index, self.purpose)

    def with_purpose(self, purpose: Purpose) -> "StreamKey":
        return StreamKey(self.seed, self.path_index, purpose)


def generator(key: StreamKey) -> np.random.Generator:
    """Philox generator whose state is a hash of the full key."""
    ss = np.random.SeedSequence(
        entropy=int(key.seed), spawn_key=(int(key.purpose), int(key.path_index))
    )
    return np.random.Generator(np.random.Philox(ss))


def uniforms(key: StreamKey, count: int) -> np.ndarray:
    """Uniforms on the open interval (0, 1), 53 bits each."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    bits = generator(key).integers(0, 2 ** 64, size=count, dtype=np.uint64, endpoint=False)
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


def standard_normal(key: StreamKey, count: int) -> np.ndarray:
    """I.i.d. N(0, 1) variates by inverse-CDF transform of ``uniforms``."""
    return ndtri(uniforms(key, count))


@dataclass(frozen=True, eq=False)
class NoiseGrid:
    """Brownian increments on a uniform grid; ``increments[k] ~ N(0, h)``."""

    key: StreamKey
    h: float
    increments: np.ndarray

    def __post_init__(self):
        self.increments.setflags(write=False)

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]

    @property
    def horizon(self) -> float:
        return self.h * self.n_steps


def _quantise(x: np.ndarray) -> np.ndarray:
    return np.round(x / LATTICE) * LATTICE


def make_noise_grid(key: StreamKey, h_fine: float, n_steps: int) -> NoiseGrid:
    if not h_fine > 0:
        raise ValueError(f"h_fine must be positive, got {h_fine}")
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    inc = _quantise(np.sqrt(h_fine) * standard_normal(key, n_steps))
    return NoiseGrid(key, float(h_fine), inc)


def make_noise_matrix(seed: int, n_paths: int, h_fine: float, n_steps: int,
                      first_path: int = 0) -> np.ndarray:
    """Stack of per-path grids, row ``i`` generated from path index ``first_path + i``."""
    return np.stack([
        make_noise_grid(StreamKey(seed, first_path + i), h_fine, n_steps).increments
        for i in range(n_paths)
    ])


def coarsen_matrix(increments: np.ndarray, factor: int) -> np.ndarray:
    """Block sums of consecutive ``factor`` increments along the last axis."""
    n = increments.shape[-1]
    if factor < 1 or n % factor:
        raise ValueError(f"factor {factor} does not divide n_steps {n}")
    if factor == 1:
        return increments.copy()
    out = increments[..., 0::factor].copy()
    for j in range(1, factor):
        out += increments[..., j::factor]
    return out


def coarsen(grid: NoiseGrid, factor: int) -> NoiseGrid:
    return NoiseGrid(grid.key, grid.h * factor, coarsen_matrix(grid.increments, factor))
