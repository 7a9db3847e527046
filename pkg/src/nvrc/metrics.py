"""Quality and size metrics: PSNR, 3D SSIM, compression ratio, gradient MSE.

PSNR and SSIM operate on normalized volumes with unit dynamic range;
this is a documented choice (the peak is 1.0, not the source dtype
range) and is flagged in rendered reports.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import InputError
from .volume import Volume, central_differences, ground_truth_bytes

PSNR_TABLE_CAP = 99.99


def mse(a: Volume, b: Volume) -> float:
    if a.dims != b.dims:
        raise InputError(f"volume dims differ: {a.dims} vs {b.dims}")
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    return float(np.mean(diff * diff))


def psnr(a: Volume, b: Volume) -> float:
    """Peak signal-to-noise ratio in dB against a unit peak.

    Identical volumes return +inf; table renderers cap that at 99.99.
    """
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return -10.0 * math.log10(err)


def ssim3d(a: Volume, b: Volume, window: int = 7) -> float:
    """Mean local SSIM over sliding cubic windows with uniform weights.

    Window statistics use C1=(0.01)^2, C2=(0.03)^2 on unit dynamic range.
    Only centers whose window fits entirely inside the volume contribute,
    so boundary padding never skews the score.
    """
    if a.dims != b.dims:
        raise InputError(f"volume dims differ: {a.dims} vs {b.dims}")
    if min(a.dims.nx, a.dims.ny, a.dims.nz) < window:
        raise InputError(f"volume smaller than SSIM window {window}")
    c1 = 0.01**2
    c2 = 0.03**2
    x = a.data.astype(np.float64)
    y = b.data.astype(np.float64)
    mu_x = uniform_filter(x, size=window)
    mu_y = uniform_filter(y, size=window)
    xx = uniform_filter(x * x, size=window)
    yy = uniform_filter(y * y, size=window)
    xy = uniform_filter(x * y, size=window)
    var_x = xx - mu_x * mu_x
    var_y = yy - mu_y * mu_y
    cov = xy - mu_x * mu_y
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    )
    half = window // 2
    inner = ssim_map[half:-half or None, half:-half or None, half:-half or None]
    return float(inner.mean())


def compression_ratio(v: Volume, model_bytes: int) -> float:
    """Single-precision ground-truth bytes divided by compressed bytes."""
    if model_bytes <= 0:
        raise InputError("model_bytes must be positive")
    return ground_truth_bytes(v) / model_bytes


def gradient_mse(a: Volume, b: Volume) -> float:
    """Mean squared difference of central-difference gradient fields."""
    if a.dims != b.dims:
        raise InputError(f"volume dims differ: {a.dims} vs {b.dims}")
    ga = central_differences(a.data.astype(np.float64))
    gb = central_differences(b.data.astype(np.float64))
    return float(np.mean((ga - gb) ** 2))


@dataclass
class QualityReport:
    psnr_db: float
    ssim: float
    ratio: float
    grad_mse: float
    time_to_compress: float | None = None

    def _psnr_text(self) -> str:
        if math.isinf(self.psnr_db):
            return f"{PSNR_TABLE_CAP:.2f}"
        return f"{self.psnr_db:.2f}"

    def key_values(self) -> list[tuple[str, str]]:
        rows = [
            ("psnr_db", self._psnr_text()),
            ("ssim", f"{self.ssim:.4f}"),
            ("compression_ratio", f"{self.ratio:.2f}"),
            ("grad_mse", f"{self.grad_mse:.6e}"),
            ("psnr_peak", "1.0 (normalized range)"),
        ]
        if self.time_to_compress is not None:
            rows.append(("time_to_compress_s", f"{self.time_to_compress:.2f}"))
        return rows

    def as_lines(self) -> str:
        """Machine-parsable key=value lines."""
        return "\n".join(f"{k}={v}" for k, v in self.key_values())

    def as_table(self) -> str:
        rows = self.key_values()
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)
