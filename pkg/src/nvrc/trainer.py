"""Overfitting one model to one volume: sampling, losses, epoch loop, decode.

An epoch is one complete pass over every voxel, visited in a seeded
random permutation and chunked into batches. The objective is mean
squared error, optionally plus a weighted gradient-MSE term computed by
central differences of the *predicted* volume against those of the
ground truth.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .encoding import BaselineEncoder, BaselineEncoding, HashConfig, HashEncoder
from .errors import InputError, NumericsError
from .network import MlpConfig, MlpParams, init_mlp, mlp_backward, mlp_forward
from .optim import FULL32, MIXED16, Adam, half_roundtrip, validate_precision
from .volume import (
    Dims,
    ScalarDtype,
    Volume,
    central_differences,
    coords_for_flat_indices,
    voxel_to_coord,
)

Encoder = HashEncoder | BaselineEncoder


@dataclass
class Model:
    """Encoder + MLP + normalization metadata: the unit of compression."""

    encoder: Encoder
    mlp_config: MlpConfig
    mlp: MlpParams
    dims: Dims
    vmin: float
    vmax: float
    source_dtype: ScalarDtype = field(default_factory=lambda: ScalarDtype("f32"))
    precision: str = FULL32
    meta_init: bool = False

    def __post_init__(self):
        if self.encoder.output_width != self.mlp_config.input_width:
            raise InputError(
                f"encoder width {self.encoder.output_width} does not match "
                f"network input {self.mlp_config.input_width}"
            )
        validate_precision(self.precision)

    def parameter_arrays(self) -> list[np.ndarray]:
        return self.encoder.parameter_arrays() + self.mlp.parameter_arrays()

    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameter_arrays()))


def build_model(
    encoding: HashConfig | BaselineEncoding,
    dims: Dims,
    seed: int,
    hidden_layers: int = 2,
    hidden_width: int = 64,
    vmin: float = 0.0,
    vmax: float = 1.0,
    source_dtype: ScalarDtype | None = None,
    precision: str = FULL32,
) -> Model:
    """Fresh model with seeded initialization (encoder tables, then MLP)."""
    rng = np.random.default_rng(seed)
    if isinstance(encoding, HashConfig):
        encoder: Encoder = HashEncoder.create(encoding, rng)
    else:
        encoder = BaselineEncoder(encoding)
    mlp_cfg = MlpConfig(
        input_width=encoder.output_width,
        hidden_layers=hidden_layers,
        hidden_width=hidden_width,
    )
    return Model(
        encoder=encoder,
        mlp_config=mlp_cfg,
        mlp=init_mlp(mlp_cfg, rng),
        dims=dims,
        vmin=vmin,
        vmax=vmax,
        source_dtype=source_dtype or ScalarDtype("f32"),
        precision=precision,
    )


def get_params(model: Model) -> list[np.ndarray]:
    """Live views of every trainable array (tables first, then MLP layers)."""
    return model.parameter_arrays()


def set_params(model: Model, arrays: list[np.ndarray]) -> None:
    """Replace all trainable arrays with copies of `arrays`."""
    current = model.parameter_arrays()
    if len(arrays) != len(current):
        raise InputError("parameter list length mismatch")
    for dst, src in zip(current, arrays):
        if dst.shape != src.shape:
            raise InputError(f"parameter shape mismatch: {dst.shape} vs {src.shape}")
        dst[...] = src


def clone_params(arrays: list[np.ndarray]) -> list[np.ndarray]:
    return [a.copy() for a in arrays]


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 2**14
    seed: int = 0
    lambda_grad: float = 0.0
    precision: str = FULL32
    lr_tables: float = 1e-2
    lr_mlp: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_decay: float = 1.0  # per-epoch multiplier; 1.0 disables the schedule
    grad_clip: float = 0.0  # global-norm clip threshold; 0 disables
    deterministic: bool = False  # zero recorded wall times for reproducible outputs
    psnr_sample_limit: int = 64**3  # per-epoch PSNR subsample cap

    def __post_init__(self):
        if self.epochs < 0:
            raise InputError("epochs must be >= 0")
        if self.batch_size < 1:
            raise InputError("batch_size must be >= 1")
        if self.lambda_grad < 0:
            raise InputError("lambda_grad must be >= 0")
        validate_precision(self.precision)


@dataclass
class TrainReport:
    """Per-epoch history plus optional step-indexed PSNR checkpoints."""

    epoch_loss: list[float] = field(default_factory=list)
    epoch_psnr: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)  # cumulative wall time
    iterations: int = 0
    final_psnr: float | None = None
    checkpoint_psnr: list[tuple[int, float]] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss", "psnr", "seconds"])
            for e, (loss, p, sec) in enumerate(
                zip(self.epoch_loss, self.epoch_psnr, self.epoch_seconds)
            ):
                writer.writerow([e, f"{loss:.8e}", f"{p:.4f}", f"{sec:.3f}"])


def sample_epoch(volume: Volume, batch_size: int, rng: np.random.Generator):
    """Yield (coords, targets) batches covering every voxel exactly once.

    The voxel order is a seeded permutation; the last batch may be short.
    """
    if batch_size > volume.dims.voxel_count:
        raise InputError("batch_size exceeds voxel count")
    for flat in _sample_epoch_flat(volume.dims, batch_size, rng):
        coords = coords_for_flat_indices(flat, volume.dims)
        targets = volume.flat[flat][:, None]
        yield coords, targets


def _sample_epoch_flat(dims: Dims, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(dims.voxel_count)
    for start in range(0, dims.voxel_count, batch_size):
        yield order[start : start + batch_size]


def loss_l2(pred: np.ndarray, target: np.ndarray):
    """Mean squared error and its gradient w.r.t. the predictions."""
    if pred.shape != target.shape:
        raise InputError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    return loss, (2.0 / pred.shape[0]) * diff


def central_gradient(volume: Volume, idx) -> np.ndarray:
    """Central-difference gradient (voxel units) at one or more voxels.

    Interior voxels use (v[i+1]-v[i-1])/2 per axis; faces use one-sided
    first differences. `idx` is an (i, j, k) triple or an (n, 3) batch.
    """
    arr = np.atleast_2d(np.asarray(idx, dtype=np.int64))
    single = np.asarray(idx).ndim == 1
    plus, minus, denom = _difference_stencil(arr, volume.dims)
    data = volume.data
    out = np.empty((arr.shape[0], 3), dtype=np.float64)
    for axis in range(3):
        p = plus[axis]
        m = minus[axis]
        out[:, axis] = (
            data[p[:, 2], p[:, 1], p[:, 0]].astype(np.float64)
            - data[m[:, 2], m[:, 1], m[:, 0]]
        ) / denom[:, axis]
    return out[0] if single else out


def _difference_stencil(idx: np.ndarray, dims: Dims):
    """Clamped plus/minus neighbor indices and spans for each axis."""
    n = dims.as_array()
    plus = []
    minus = []
    denom = np.empty((idx.shape[0], 3), dtype=np.float64)
    for axis in range(3):
        p = idx.copy()
        m = idx.copy()
        p[:, axis] = np.minimum(idx[:, axis] + 1, n[axis] - 1)
        m[:, axis] = np.maximum(idx[:, axis] - 1, 0)
        denom[:, axis] = p[:, axis] - m[:, axis]
        plus.append(p)
        minus.append(m)
    return plus, minus, denom


class _Step:
    """One gradient step over a batch; owns working copies and Adam state."""

    def __init__(self, model: Model, cfg: TrainConfig):
        self.model = model
        self.cfg = cfg
        self.master = get_params(model)
        self.mixed = cfg.precision == MIXED16
        if self.mixed:
            self.working = [half_roundtrip(p) for p in self.master]
        else:
            self.working = self.master
        n_tables = len(model.encoder.parameter_arrays())
        self.encoder = _with_tables(model.encoder, self.working[:n_tables])
        self.mlp = _mlp_from_arrays(model.mlp, self.working[n_tables:])
        lrs = [cfg.lr_tables] * n_tables + [cfg.lr_mlp] * (len(self.master) - n_tables)
        self.adam = Adam(self.master, lrs, cfg.beta1, cfg.beta2, cfg.eps)
        self.n_tables = n_tables

    def run(self, coords, targets, idx, grad_field, lr_scale: float) -> float:
        cfg = self.cfg
        self.encoder.zero_grad()
        feats, cache = self.encoder.encode(coords)
        pred, mcache = mlp_forward(self.mlp, feats)
        loss, dpred = loss_l2(pred, targets)
        wgrads, bgrads, dfeats = mlp_backward(self.mlp, mcache, dpred)
        self.encoder.backward(dfeats, cache)
        if cfg.lambda_grad > 0.0:
            gloss, wg2, bg2 = self._gradient_loss(coords, idx, grad_field)
            loss += cfg.lambda_grad * gloss
            for a, b in zip(wgrads, wg2):
                a += b
            for a, b in zip(bgrads, bg2):
                a += b
        if not math.isfinite(loss):
            raise NumericsError(f"non-finite training loss {loss!r}")
        grads = self.encoder.grad_arrays() + _interleave(wgrads, bgrads)
        self.adam.step(self.master, grads, lr_scale=lr_scale, grad_clip=cfg.grad_clip)
        if self.mixed:
            for w, m in zip(self.working, self.master):
                w[...] = half_roundtrip(m)
        return loss

    def _gradient_loss(self, coords, idx, grad_field):
        """Gradient-MSE term; accumulates encoder grads, returns MLP grads.

        Predicted central differences come from evaluating the network at
        the voxel-neighbor coordinates (same stencil, including one-sided
        boundaries), so the term mirrors the ground-truth computation.
        """
        dims = self.model.dims
        batch = idx.shape[0]
        plus, minus, denom = _difference_stencil(idx, dims)
        stacked_idx = np.concatenate(
            [plus[0], minus[0], plus[1], minus[1], plus[2], minus[2]]
        )
        stacked = voxel_to_coord(stacked_idx, dims)
        feats, cache = self.encoder.encode(stacked)
        pred, mcache = mlp_forward(self.mlp, feats)
        pred = pred.reshape(6, batch)
        pg = np.stack(
            [(pred[2 * a] - pred[2 * a + 1]) / denom[:, a] for a in range(3)], axis=1
        )
        tg = np.stack(
            [grad_field[a][idx[:, 2], idx[:, 1], idx[:, 0]] for a in range(3)], axis=1
        )
        resid = pg - tg
        gloss = float(np.mean(resid * resid))
        # lambda folds into the upstream signal so returned grads are final.
        up = (2.0 * self.cfg.lambda_grad / resid.size) * resid / denom
        dpred = np.empty((6, batch), dtype=pred.dtype)
        for a in range(3):
            dpred[2 * a] = up[:, a]
            dpred[2 * a + 1] = -up[:, a]
        wgrads, bgrads, dfeats = mlp_backward(self.mlp, mcache, dpred.reshape(-1, 1))
        self.encoder.backward(dfeats, cache)
        return gloss, wgrads, bgrads


def _with_tables(encoder: Encoder, tables) -> Encoder:
    if isinstance(encoder, HashEncoder):
        return HashEncoder(encoder.config, list(tables))
    return encoder


def _mlp_from_arrays(mlp: MlpParams, arrays) -> MlpParams:
    arrays = list(arrays)
    return MlpParams(arrays[0::2], arrays[1::2])


def _interleave(wgrads, bgrads) -> list[np.ndarray]:
    out = []
    for w, b in zip(wgrads, bgrads):
        out.append(w)
        out.append(b)
    return out


def train(
    volume: Volume,
    model: Model,
    cfg: TrainConfig,
    init_params: list[np.ndarray] | None = None,
) -> tuple[Model, TrainReport]:
    """Overfit `model` to `volume` for cfg.epochs full passes.

    `init_params` (e.g. a meta-learned initialization) replaces the
    model's parameters before the first step. The model is updated in
    place and returned with the per-epoch report.
    """
    return _run_training(volume, model, cfg, init_params=init_params)


def train_steps(
    volume: Volume,
    model: Model,
    cfg: TrainConfig,
    num_steps: int,
    psnr_checkpoints: list[int] | None = None,
    init_params: list[np.ndarray] | None = None,
) -> tuple[Model, TrainReport]:
    """Train for an exact number of gradient updates (epochs keep cycling)."""
    return _run_training(
        volume,
        model,
        cfg,
        init_params=init_params,
        num_steps=num_steps,
        psnr_checkpoints=psnr_checkpoints,
    )


def _run_training(
    volume: Volume,
    model: Model,
    cfg: TrainConfig,
    init_params=None,
    num_steps: int | None = None,
    psnr_checkpoints=None,
) -> tuple[Model, TrainReport]:
    if volume.dims != model.dims:
        raise InputError(f"volume dims {volume.dims} do not match model {model.dims}")
    if init_params is not None:
        set_params(model, init_params)
    report = TrainReport()
    checkpoints = set(psnr_checkpoints or [])
    batch_size = min(cfg.batch_size, volume.dims.voxel_count)
    step = _Step(model, cfg)
    grad_field = (
        central_differences(volume.data) if cfg.lambda_grad > 0.0 else None
    )
    eval_flat = _psnr_subsample(volume.dims, cfg.psnr_sample_limit)
    eval_coords = coords_for_flat_indices(eval_flat, volume.dims)
    eval_targets = volume.flat[eval_flat]

    def subsample_psnr() -> float:
        pred = _predict(step.encoder, step.mlp, eval_coords, clamp=True)
        err = float(np.mean((pred[:, 0] - eval_targets) ** 2))
        return math.inf if err == 0.0 else -10.0 * math.log10(err)

    rng = np.random.default_rng(cfg.seed)
    total_steps = 0
    if 0 in checkpoints:
        report.checkpoint_psnr.append((0, subsample_psnr()))
    start = time.perf_counter()
    done = False
    epoch = 0
    while not done:
        if num_steps is None and epoch >= cfg.epochs:
            break
        if num_steps is not None and total_steps >= num_steps:
            break
        lr_scale = cfg.lr_decay**epoch
        epoch_loss = 0.0
        epoch_count = 0
        for flat in _sample_epoch_flat(volume.dims, batch_size, rng):
            coords = coords_for_flat_indices(flat, volume.dims)
            targets = volume.flat[flat][:, None]
            idx = np.stack(
                [
                    flat % volume.dims.nx,
                    (flat // volume.dims.nx) % volume.dims.ny,
                    flat // (volume.dims.nx * volume.dims.ny),
                ],
                axis=1,
            )
            loss = step.run(coords, targets, idx, grad_field, lr_scale)
            epoch_loss += loss * flat.size
            epoch_count += flat.size
            total_steps += 1
            if total_steps in checkpoints:
                report.checkpoint_psnr.append((total_steps, subsample_psnr()))
            if num_steps is not None and total_steps >= num_steps:
                break
        if num_steps is None and epoch_count != volume.dims.voxel_count:
            raise NumericsError("epoch sampler failed to cover the volume")
        if epoch_count:
            report.epoch_loss.append(epoch_loss / epoch_count)
            report.epoch_psnr.append(subsample_psnr())
            report.epoch_seconds.append(
                0.0 if cfg.deterministic else time.perf_counter() - start
            )
        epoch += 1
        if num_steps is not None and total_steps >= num_steps:
            done = True
        if num_steps is None and epoch >= cfg.epochs:
            done = True
        if cfg.epochs == 0 and num_steps is None:
            done = True
    report.iterations = total_steps
    report.final_psnr = report.epoch_psnr[-1] if report.epoch_psnr else None
    return model, report


def _psnr_subsample(dims: Dims, limit: int) -> np.ndarray:
    """Fixed lattice-strided flat indices, at most `limit` voxels."""
    if dims.voxel_count <= limit:
        return np.arange(dims.voxel_count, dtype=np.int64)
    stride = 1
    while (
        len(range(0, dims.nx, stride))
        * len(range(0, dims.ny, stride))
        * len(range(0, dims.nz, stride))
        > limit
    ):
        stride += 1
    i = np.arange(0, dims.nx, stride)
    j = np.arange(0, dims.ny, stride)
    k = np.arange(0, dims.nz, stride)
    kk, jj, ii = np.meshgrid(k, j, i, indexing="ij")
    return (kk * dims.ny * dims.nx + jj * dims.nx + ii).reshape(-1)


def _predict(encoder: Encoder, mlp: MlpParams, coords: np.ndarray, clamp: bool):
    feats, _ = encoder.encode(coords)
    pred, _ = mlp_forward(mlp, feats)
    if clamp:
        pred = np.clip(pred, 0.0, 1.0)
    return pred


def evaluate_model(
    model: Model, coords: np.ndarray, clamp: bool = False, chunk: int = 1 << 17
) -> np.ndarray:
    """Network prediction at unit-cube coordinates, shape (n, 1)."""
    coords = np.atleast_2d(np.asarray(coords))
    out = np.empty((coords.shape[0], model.mlp_config.output_width), dtype=np.float32)
    for start in range(0, coords.shape[0], chunk):
        part = coords[start : start + chunk]
        out[start : start + chunk] = _predict(model.encoder, model.mlp, part, clamp)
    return out


def decode_volume(model: Model, dims: Dims | None = None, threads: int = 1) -> Volume:
    """Evaluate the model at every voxel coordinate, clamped to [0, 1].

    The result carries the model's vmin/vmax so a denormalized export
    reproduces the original intensity range.
    """
    dims = dims or model.dims
    nvox = dims.voxel_count
    out = np.empty(nvox, dtype=np.float32)
    chunk = 1 << 17

    def fill(start: int) -> None:
        flat = np.arange(start, min(start + chunk, nvox), dtype=np.int64)
        coords = coords_for_flat_indices(flat, dims)
        out[start : start + chunk] = _predict(
            model.encoder, model.mlp, coords, clamp=True
        )[:, 0]

    starts = list(range(0, nvox, chunk))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, starts))
    else:
        for s in starts:
            fill(s)
    return Volume(
        dims=dims,
        data=out.reshape(dims.shape),
        vmin=model.vmin,
        vmax=model.vmax,
        source_dtype=model.source_dtype,
    )


def apply_precision(model: Model) -> Model:
    """Model as its compressed file would store it (half-quantized in mixed16)."""
    if model.precision != MIXED16:
        return model
    arrays = [half_roundtrip(p) for p in get_params(model)]
    n_tables = len(model.encoder.parameter_arrays())
    clone = replace(
        model,
        encoder=_with_tables(model.encoder, arrays[:n_tables]),
        mlp=_mlp_from_arrays(model.mlp, arrays[n_tables:]),
    )
    return clone
