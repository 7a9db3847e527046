"""Input encodings for the coordinate network.

The trainable multi-resolution hash encoding does the heavy lifting:
each of `levels` grids hashes the 8 cell corners around a point into its
own table of `table_size` x `features` weights, blends them trilinearly,
and concatenates the per-level vectors. Four fixed baselines (identity,
frequency, triangle wave, one-blob) are provided for comparison runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InputError

DEFAULT_PRIMES = (1, 2654435761, 805459861)

# Corner offsets in (x, y, z) bit order; corner c has bits (c>>2, c>>1, c) & 1.
_CORNER_OFFSETS = np.array(
    [[(c >> 2) & 1, (c >> 1) & 1, c & 1] for c in range(8)], dtype=np.int64
)


@dataclass(frozen=True)
class HashConfig:
    """Hyperparameters of the multi-resolution hash encoding."""

    levels: int = 4
    features: int = 4
    table_size: int = 2**12
    n0: int = 4
    nmax: int = 32
    primes: tuple[int, int, int] = DEFAULT_PRIMES

    def __post_init__(self):
        if self.levels < 1:
            raise InputError("levels must be >= 1")
        if self.features < 1:
            raise InputError("features must be >= 1")
        if self.table_size < 1:
            raise InputError("table_size must be >= 1")
        if self.n0 < 1 or self.nmax < self.n0:
            raise InputError("need 1 <= n0 <= nmax")
        if self.levels == 1 and self.n0 != self.nmax:
            raise InputError("a single level cannot span n0 != nmax")
        if len(self.primes) != 3:
            raise InputError("need one hashing prime per dimension")

    @property
    def output_width(self) -> int:
        return self.levels * self.features

    @property
    def parameter_count(self) -> int:
        return self.levels * self.table_size * self.features


def growth_factor(cfg: HashConfig) -> float:
    """Per-level resolution multiplier between coarsest and finest grids."""
    if cfg.n0 == cfg.nmax:
        return 1.0
    return math.exp((math.log(cfg.nmax) - math.log(cfg.n0)) / (cfg.levels - 1))


def level_resolutions(cfg: HashConfig) -> list[int]:
    """Grid resolution per level: floor(n0 * b^l), nondecreasing.

    The 1e-6 nudge keeps exact integers (e.g. n0=16, nmax=512 giving
    16,32,...,512) from flooring down when b^l lands a hair below the
    true value in float arithmetic.
    """
    b = growth_factor(cfg)
    return [int(math.floor(cfg.n0 * b**level + 1e-6)) for level in range(cfg.levels)]


def cell_corners(x: np.ndarray, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer corners of the grid cell containing each point, with weights.

    `x` is (n, 3) in the unit cube. Scales by `resolution`, floors to find
    the lower corner, and returns the 8 surrounding corners (n, 8, 3) plus
    trilinear weights (n, 8) that sum to 1.
    """
    x = np.atleast_2d(np.asarray(x))
    s = x * x.dtype.type(resolution)
    lower = np.floor(s).astype(np.int64)
    t = s - lower
    corners = lower[:, None, :] + _CORNER_OFFSETS[None, :, :]
    # Per-axis (1-t, t) pairs selected by each corner's offset bits.
    both = np.stack([1.0 - t, t], axis=1)  # (n, 2, 3)
    weights = (
        both[:, _CORNER_OFFSETS[:, 0], 0]
        * both[:, _CORNER_OFFSETS[:, 1], 1]
        * both[:, _CORNER_OFFSETS[:, 2], 2]
    )
    return corners, weights


def hash_index(corners: np.ndarray, cfg: HashConfig) -> np.ndarray:
    """Spatial hash of integer corners: XOR of per-axis prime products mod T.

    Products wrap in unsigned 64-bit arithmetic before the modulus.
    Accepts any (..., 3) array of non-negative corners.
    """
    c = np.asarray(corners, dtype=np.uint64)
    primes = np.asarray(cfg.primes, dtype=np.uint64)
    h = c[..., 0] * primes[0]
    h = h ^ (c[..., 1] * primes[1])
    h = h ^ (c[..., 2] * primes[2])
    return (h % np.uint64(cfg.table_size)).astype(np.int64)


class HashEncoder:
    """Trainable multi-resolution hash tables with forward/backward passes."""

    def __init__(self, config: HashConfig, tables: Sequence[np.ndarray]):
        if len(tables) != config.levels:
            raise InputError("one table per level required")
        for table in tables:
            if table.shape != (config.table_size, config.features):
                raise InputError(
                    f"table shape {table.shape} does not match config "
                    f"({config.table_size}, {config.features})"
                )
        self.config = config
        self.tables = list(tables)
        self.resolutions = level_resolutions(config)
        self.table_grads = [np.zeros_like(t) for t in self.tables]

    @classmethod
    def create(cls, config: HashConfig, rng: np.random.Generator) -> "HashEncoder":
        """Fresh encoder with entries uniform in [-1e-4, 1e-4]."""
        tables = [
            rng.uniform(-1e-4, 1e-4, size=(config.table_size, config.features)).astype(
                np.float32
            )
            for _ in range(config.levels)
        ]
        return cls(config, tables)

    @property
    def output_width(self) -> int:
        return self.config.output_width

    def parameter_arrays(self) -> list[np.ndarray]:
        return self.tables

    def grad_arrays(self) -> list[np.ndarray]:
        return self.table_grads

    def set_parameter_arrays(self, arrays: Sequence[np.ndarray]) -> None:
        self.tables = list(arrays)
        self.table_grads = [np.zeros_like(t) for t in self.tables]

    def zero_grad(self) -> None:
        for g in self.table_grads:
            g.fill(0)

    def encode(self, x: np.ndarray):
        """Features (n, levels*features) for points in the unit cube.

        The returned cache holds per-level corner indices and weights for
        the backward pass. Hot path: loops the 8 corners to avoid
        materializing (n, 8, ...) intermediates.
        """
        x = np.atleast_2d(np.asarray(x))
        n = x.shape[0]
        width = self.config.features
        primes = np.asarray(self.config.primes, dtype=np.uint64)
        table_size = np.uint64(self.config.table_size)
        one = np.uint64(1)
        features = np.empty((n, self.config.levels * width), dtype=x.dtype)
        cache = []
        for level, res in enumerate(self.resolutions):
            s = x * x.dtype.type(res)
            lower = np.floor(s)
            t = s - lower
            lo = lower.astype(np.uint64)
            hx = (lo[:, 0] * primes[0], (lo[:, 0] + one) * primes[0])
            hy = (lo[:, 1] * primes[1], (lo[:, 1] + one) * primes[1])
            hz = (lo[:, 2] * primes[2], (lo[:, 2] + one) * primes[2])
            wx = (1.0 - t[:, 0], t[:, 0])
            wy = (1.0 - t[:, 1], t[:, 1])
            wz = (1.0 - t[:, 2], t[:, 2])
            table = self.tables[level]
            acc = np.zeros((n, width), dtype=x.dtype)
            level_idx = []
            level_w = []
            for bx in range(2):
                for by in range(2):
                    hxy = hx[bx] ^ hy[by]
                    wxy = wx[bx] * wy[by]
                    for bz in range(2):
                        idx = ((hxy ^ hz[bz]) % table_size).astype(np.int64)
                        w = wxy * wz[bz]
                        acc += w[:, None] * table[idx]
                        level_idx.append(idx)
                        level_w.append(w)
            features[:, level * width : (level + 1) * width] = acc
            cache.append((level_idx, level_w))
        return features, cache

    def backward(self, grad_out: np.ndarray, cache) -> None:
        """Accumulate d(loss)/d(table entries) into the gradient buffers.

        Corners that collide onto one slot superpose additively; entries
        never touched by the batch keep their current gradient.
        """
        width = self.config.features
        size = self.config.table_size
        cols = np.arange(width, dtype=np.int64)
        for level, (level_idx, level_w) in enumerate(cache):
            g = grad_out[:, level * width : (level + 1) * width]
            acc = np.zeros(size * width)
            for idx, w in zip(level_idx, level_w):
                contrib = w[:, None] * g
                flat = idx[:, None] * width + cols[None, :]
                acc += np.bincount(
                    flat.ravel(), weights=contrib.ravel(), minlength=size * width
                )
            grad = self.table_grads[level]
            grad += acc.reshape(size, width).astype(grad.dtype)

    def astype(self, dtype) -> "HashEncoder":
        """Copy with tables cast to `dtype` (used by 64-bit gradient checks)."""
        return HashEncoder(self.config, [t.astype(dtype) for t in self.tables])


BASELINE_SCHEMES = ("identity", "frequency", "triangle", "oneblob")


@dataclass(frozen=True)
class BaselineEncoding:
    """Fixed (non-trainable) encoding applied independently per axis."""

    scheme: str
    frequencies: int = 10  # highest power-of-two frequency for frequency/triangle
    bins: int = 64  # bin count for oneblob
    sigma: float | None = None  # blob width; defaults to 1/bins

    def __post_init__(self):
        if self.scheme not in BASELINE_SCHEMES:
            raise InputError(
                f"unknown encoding scheme {self.scheme!r}; expected one of {BASELINE_SCHEMES}"
            )
        if self.frequencies < 0:
            raise InputError("frequencies must be >= 0")
        if self.bins < 1:
            raise InputError("bins must be >= 1")

    @property
    def blob_sigma(self) -> float:
        return self.sigma if self.sigma is not None else 1.0 / self.bins

    @property
    def width_per_axis(self) -> int:
        if self.scheme == "identity":
            return 1
        if self.scheme == "frequency":
            return 2 * (self.frequencies + 1)
        if self.scheme == "triangle":
            return self.frequencies + 1
        return self.bins

    @property
    def output_width(self) -> int:
        return 3 * self.width_per_axis


def _triangle_wave(t: np.ndarray) -> np.ndarray:
    """Period-1 triangle wave with tri(0)=0, peaking at +1/-1 like a sine."""
    u = (t + 0.75) % 1.0
    return 4.0 * np.abs(u - 0.5) - 1.0


def encode_baseline(x: np.ndarray, enc: BaselineEncoding) -> np.ndarray:
    """Apply a fixed encoding to (n, 3) unit-cube points, axes concatenated."""
    x = np.atleast_2d(np.asarray(x))
    if enc.scheme == "identity":
        return x.copy()
    if enc.scheme in ("frequency", "triangle"):
        powers = (2.0 ** np.arange(enc.frequencies + 1)).astype(x.dtype)
        if enc.scheme == "frequency":
            angles = np.pi * x[:, :, None] * powers[None, None, :]  # (n, 3, M+1)
            block = np.stack([np.sin(angles), np.cos(angles)], axis=3)  # sin,cos pairs
            return block.reshape(x.shape[0], -1)
        waves = _triangle_wave(x[:, :, None] * powers[None, None, :])
        return waves.reshape(x.shape[0], -1)
    centers = ((np.arange(enc.bins) + 0.5) / enc.bins).astype(x.dtype)
    sigma = x.dtype.type(enc.blob_sigma)
    d = x[:, :, None] - centers[None, None, :]
    return np.exp(-(d * d) / (2 * sigma * sigma)).reshape(x.shape[0], -1)


class BaselineEncoder:
    """Wraps a fixed encoding behind the same interface as HashEncoder."""

    def __init__(self, spec: BaselineEncoding):
        self.spec = spec

    @property
    def output_width(self) -> int:
        return self.spec.output_width

    def parameter_arrays(self) -> list[np.ndarray]:
        return []

    def grad_arrays(self) -> list[np.ndarray]:
        return []

    def set_parameter_arrays(self, arrays) -> None:
        if len(list(arrays)) != 0:
            raise InputError("baseline encoders have no trainable parameters")

    def zero_grad(self) -> None:
        pass

    def encode(self, x: np.ndarray):
        return encode_baseline(x, self.spec), None

    def backward(self, grad_out: np.ndarray, cache) -> None:
        pass

    def astype(self, dtype) -> "BaselineEncoder":
        return self
