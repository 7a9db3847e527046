"""Raw scalar volume loading, normalization, and coordinate mapping.

Raw bricks are headerless binary files in x-fastest order (x innermost,
z outermost); dimensions and scalar type arrive out-of-band, either as
CLI flags or a small `key=value` sidecar descriptor.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

_DTYPE_NAMES = ("u8", "u16", "i16", "i32", "f32")
_NUMPY_CODES = {"u8": "u1", "u16": "u2", "i16": "i2", "i32": "i4", "f32": "f4"}
_BYTE_WIDTHS = {"u8": 1, "u16": 2, "i16": 2, "i32": 4, "f32": 4}


@dataclass(frozen=True)
class ScalarDtype:
    """Source scalar type of a raw brick, with explicit endianness."""

    name: str
    endian: str = "le"

    def __post_init__(self):
        if self.name not in _DTYPE_NAMES:
            raise InputError(f"unknown dtype {self.name!r}; expected one of {_DTYPE_NAMES}")
        if self.endian not in ("le", "be"):
            raise InputError(f"endianness must be 'le' or 'be', got {self.endian!r}")

    @property
    def byte_width(self) -> int:
        return _BYTE_WIDTHS[self.name]

    @property
    def numpy_dtype(self) -> np.dtype:
        prefix = "<" if self.endian == "le" else ">"
        return np.dtype(prefix + _NUMPY_CODES[self.name])

    @classmethod
    def parse(cls, name: str, endian: str = "le") -> "ScalarDtype":
        return cls(name=name, endian=endian)


@dataclass(frozen=True)
class Dims:
    """Voxel counts per axis.

    All axes must be at least 2: central differences and the corner
    coordinate map i/(n-1) both need two samples per axis.
    """

    nx: int
    ny: int
    nz: int

    def __post_init__(self):
        for axis, n in zip("xyz", (self.nx, self.ny, self.nz)):
            if n < 2:
                raise InputError(f"dims.{axis} must be >= 2, got {n}")
        if self.voxel_count >= 2**63:
            raise InputError("voxel count overflows a 64-bit counter")

    @property
    def voxel_count(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def shape(self) -> tuple[int, int, int]:
        """Array shape (nz, ny, nx): C-order makes x the fastest axis."""
        return (self.nz, self.ny, self.nx)

    def as_array(self) -> np.ndarray:
        return np.array([self.nx, self.ny, self.nz], dtype=np.int64)


@dataclass
class Volume:
    """Dense scalar grid normalized to [0, 1].

    `data` has shape (nz, ny, nx) so that flattening yields the raw
    brick's x-fastest order. `vmin`/`vmax` record the original intensity
    range; denormalizing with them reverses the normalization.
    """

    dims: Dims
    data: np.ndarray
    vmin: float
    vmax: float
    source_dtype: ScalarDtype = field(default_factory=lambda: ScalarDtype("f32"))

    def __post_init__(self):
        if self.data.shape != self.dims.shape:
            raise InputError(
                f"data shape {self.data.shape} does not match dims {self.dims.shape}"
            )
        if self.vmax < self.vmin:
            raise InputError("vmax must be >= vmin")

    @property
    def flat(self) -> np.ndarray:
        """Values in x-fastest order, shape (nx*ny*nz,)."""
        return self.data.reshape(-1)

    def value_at(self, i: int, j: int, k: int) -> float:
        return float(self.data[k, j, i])

    def denormalized(self) -> np.ndarray:
        """Original-range values as float32, shape (nz, ny, nx)."""
        return (self.data * (self.vmax - self.vmin) + self.vmin).astype(np.float32)


def normalize(values: np.ndarray, dims: Dims, source_dtype: ScalarDtype) -> Volume:
    """Min-max normalize raw values to [0, 1]; constant volumes map to zeros."""
    values = np.asarray(values, dtype=np.float32).reshape(dims.shape)
    vmin = float(values.min())
    vmax = float(values.max())
    if vmax > vmin:
        data = (values - vmin) / np.float32(vmax - vmin)
    else:
        data = np.zeros(dims.shape, dtype=np.float32)
    return Volume(dims=dims, data=data.astype(np.float32), vmin=vmin, vmax=vmax,
                  source_dtype=source_dtype)


def load_raw(path: str | os.PathLike, dims: Dims, dtype: ScalarDtype) -> Volume:
    """Load a headerless raw brick, convert to float32, normalize to [0, 1]."""
    try:
        actual = os.path.getsize(path)
    except OSError as exc:
        raise InputError(f"cannot read volume file {path}: {exc}") from exc
    expected = dims.voxel_count * dtype.byte_width
    if actual != expected:
        raise InputError(
            f"{path}: expected {expected} bytes for dims "
            f"{dims.nx}x{dims.ny}x{dims.nz} {dtype.name}, found {actual}"
        )
    raw = np.fromfile(path, dtype=dtype.numpy_dtype)
    return normalize(raw, dims, dtype)


def save_raw(path: str | os.PathLike, volume: Volume, out_dtype: str = "f32") -> int:
    """Write a volume back to a raw brick, denormalized to the original range.

    `out_dtype` is either "f32" (little-endian float32) or "source"
    (rounded and clipped to the volume's original scalar type). Returns
    the byte count written.
    """
    values = volume.denormalized()
    if out_dtype == "f32":
        arr = values.astype("<f4")
    elif out_dtype == "source":
        np_dtype = volume.source_dtype.numpy_dtype
        if volume.source_dtype.name == "f32":
            arr = values.astype(np_dtype)
        else:
            info = np.iinfo(np_dtype)
            arr = np.clip(np.rint(values), info.min, info.max).astype(np_dtype)
    else:
        raise InputError(f"out_dtype must be 'f32' or 'source', got {out_dtype!r}")
    arr.tofile(path)
    return arr.nbytes


def voxel_to_coord(indices, dims: Dims) -> np.ndarray:
    """Map voxel indices (i, j, k) to coordinates in the unit cube.

    Corner voxels map exactly to 0 and 1: x = i/(nx-1) per axis. Accepts
    a single (i, j, k) triple or an (n, 3) batch.
    """
    idx = np.asarray(indices, dtype=np.int64)
    single = idx.ndim == 1
    idx = np.atleast_2d(idx)
    n = dims.as_array()
    if (idx < 0).any() or (idx >= n).any():
        raise InputError(f"voxel index out of range for dims {dims}")
    coords = idx.astype(np.float32) / (n - 1).astype(np.float32)
    return coords[0] if single else coords


def coords_for_flat_indices(flat: np.ndarray, dims: Dims) -> np.ndarray:
    """Unit-cube coordinates for x-fastest flat voxel indices."""
    flat = np.asarray(flat, dtype=np.int64)
    i = flat % dims.nx
    j = (flat // dims.nx) % dims.ny
    k = flat // (dims.nx * dims.ny)
    return voxel_to_coord(np.stack([i, j, k], axis=-1), dims)


def ground_truth_bytes(v: Volume | Dims) -> int:
    """Size of the volume in single-precision floats: the compression-ratio baseline."""
    dims = v.dims if isinstance(v, Volume) else v
    return dims.voxel_count * 4


def central_differences(data: np.ndarray) -> np.ndarray:
    """Per-axis first differences of a (nz, ny, nx) grid, in voxel units.

    Interior voxels use the central stencil (v[i+1]-v[i-1])/2; faces fall
    back to one-sided first differences. Returns shape (3, nz, ny, nx)
    ordered (d/dx, d/dy, d/dz).
    """
    gx = np.empty_like(data)
    gy = np.empty_like(data)
    gz = np.empty_like(data)
    gx[:, :, 1:-1] = (data[:, :, 2:] - data[:, :, :-2]) / 2
    gx[:, :, 0] = data[:, :, 1] - data[:, :, 0]
    gx[:, :, -1] = data[:, :, -1] - data[:, :, -2]
    gy[:, 1:-1, :] = (data[:, 2:, :] - data[:, :-2, :]) / 2
    gy[:, 0, :] = data[:, 1, :] - data[:, 0, :]
    gy[:, -1, :] = data[:, -1, :] - data[:, -2, :]
    gz[1:-1, :, :] = (data[2:, :, :] - data[:-2, :, :]) / 2
    gz[0, :, :] = data[1, :, :] - data[0, :, :]
    gz[-1, :, :] = data[-1, :, :] - data[-2, :, :]
    return np.stack([gx, gy, gz])


def parse_dims(text: str) -> Dims:
    """Parse 'NX,NY,NZ' into Dims."""
    parts = text.split(",")
    if len(parts) != 3:
        raise InputError(f"dims must be 'NX,NY,NZ', got {text!r}")
    try:
        nx, ny, nz = (int(p) for p in parts)
    except ValueError as exc:
        raise InputError(f"dims must be integers, got {text!r}") from exc
    return Dims(nx, ny, nz)


def read_sidecar(path: str | os.PathLike) -> dict[str, str]:
    """Read a key=value sidecar descriptor (dims=..., dtype=..., endian=...)."""
    entries: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise InputError(f"{path}: malformed sidecar line {line!r}")
            key, value = line.split("=", 1)
            entries[key.strip()] = value.strip()
    return entries
