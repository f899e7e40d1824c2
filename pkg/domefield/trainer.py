# Copyright 2025 The domefield Authors

# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at

#     https://www.apache.org/licenses/LICENSE-2.0

# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""
The optimization loop: primary-view reconstruction, super-resolution
patches, temporal continuity and, once the schedule allows, pseudo ground
truth supervision at symmetric dome views. Checkpoints capture the field,
the optimizer moments and the random generator, so runs resume exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple
import csv
import json
import logging
import math
import os
import struct

import numpy as np
from tqdm import tqdm

from domefield import imaging
from domefield.errors import CheckpointError, DivergedLoss, InvalidConfig
from domefield.field import (
    CHANNELS, RadianceFieldParams, read_exact, read_params, write_params,
)
from domefield.geometry import Box, CameraPose, generate_rays, symmetric_pair_indices
from domefield.harness import DOME_AZIMUTHS, DOME_ELEVATIONS, DatasetManifest, read_dataset
from domefield.losses import (
    LOSS_COLUMNS, GradientFeatureExtractor, LossBreakdown, LossWeights,
    continuity_window_start, loss_cont, loss_nv, loss_rec, loss_sr, total_loss,
)
from domefield.render import GradientAccumulator, RenderMode, backward, render_rays
from domefield.sampling import SamplingStrategy, sample_pixels, split_rays
from domefield.splat import PseudoGTView, load_pseudo_gt_cache

logger = logging.getLogger(__name__)

STATE_ADAM = b"ADAM"
STATE_NONE = b"NONE"
SR_FACTOR = 2


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 5000
    rays_per_iter_primary: int = 1024
    rays_per_iter_nv: int = 1024
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weights: LossWeights = field(default_factory=LossWeights)
    strategy: SamplingStrategy = field(default_factory=SamplingStrategy)
    seed: int = 0
    n_samples: int = 128
    azimuths: Tuple[float, ...] = DOME_AZIMUTHS
    elevations: Tuple[float, ...] = DOME_ELEVATIONS
    checkpoint_every: int = 1000
    log_every: int = 100
    bg_resolution: int = 96
    fg_resolution: int = 48
    init_density: float = 0.01
    sr_patches: int = 4
    sr_patch_size: int = 32
    n_gaussians: int = 2000
    workers: int = 1
    chunk_size: int = 1024

    def validate(self) -> None:
        """
        Raises:
            InvalidConfig: naming the first offending field.
        """
        if self.iterations < 0:
            raise InvalidConfig(f"iterations must be >= 0, got {self.iterations}")
        if not self.learning_rate > 0:
            raise InvalidConfig(f"learning_rate must be > 0, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise InvalidConfig(f"{name} must lie in [0, 1), got {value}")
        for name in ("rays_per_iter_primary", "n_samples", "checkpoint_every", "log_every",
                     "bg_resolution", "fg_resolution", "n_gaussians", "workers", "chunk_size"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_samples < 2:
            raise InvalidConfig(f"n_samples must be >= 2, got {self.n_samples}")
        if self.rays_per_iter_nv < 2:
            raise InvalidConfig(f"rays_per_iter_nv must cover both views, got {self.rays_per_iter_nv}")
        if self.sr_patches < 0:
            raise InvalidConfig(f"sr_patches must be >= 0, got {self.sr_patches}")
        if self.sr_patch_size < 2 or self.sr_patch_size % SR_FACTOR:
            raise InvalidConfig(f"sr_patch_size must be a positive even number, got {self.sr_patch_size}")
        if not self.init_density > 0:
            raise InvalidConfig(f"init_density must be > 0, got {self.init_density}")
        if not self.azimuths or not self.elevations:
            raise InvalidConfig("dome azimuth and elevation lists must be non-empty")
        self.weights.validate()

    def loss_weights(self) -> LossWeights:
        return self.weights.resolved(self.iterations)


@dataclass
class TrainingData:
    """Primary frames of a written dataset, decoded to floats."""
    manifest: DatasetManifest
    images: np.ndarray
    masks: np.ndarray
    poses: List[CameraPose]

    @property
    def n_frames(self) -> int:
        return len(self.poses)

    @property
    def bg_bounds(self) -> Box:
        return Box.from_list(self.manifest.bg_bounds)

    @property
    def fg_bounds(self) -> Box:
        return Box.from_list(self.manifest.fg_bounds)


def load_training_data(root: str) -> TrainingData:
    manifest = read_dataset(root)
    images = np.stack([imaging.read_rgb(os.path.join(root, f["image"])) for f in manifest.frames])
    masks = np.stack([imaging.read_gray(os.path.join(root, f["mask"])) for f in manifest.frames])
    poses = [manifest.primary_pose(t) for t in range(1, manifest.n_frames + 1)]
    return TrainingData(manifest, images, masks, poses)


@dataclass
class AdamState:
    """First and second moments, stored in the parameter dtype."""
    m_bg: np.ndarray
    v_bg: np.ndarray
    m_fg: np.ndarray
    v_fg: np.ndarray

    @classmethod
    def zeros_like(cls, params: RadianceFieldParams) -> AdamState:
        return cls(np.zeros_like(params.bg_grid), np.zeros_like(params.bg_grid),
                   np.zeros_like(params.fg_grids), np.zeros_like(params.fg_grids))


@dataclass
class TrainState:
    params: RadianceFieldParams
    adam: AdamState
    iteration: int
    rng: np.random.Generator

    def equals(self, other: TrainState) -> bool:
        return (self.iteration == other.iteration
                and self.params.equals(other.params)
                and all(np.array_equal(getattr(self.adam, name), getattr(other.adam, name))
                        for name in ("m_bg", "v_bg", "m_fg", "v_fg"))
                and self.rng.bit_generator.state == other.rng.bit_generator.state)


def init_state(config: TrainConfig, bg_bounds: Box, fg_bounds: Box, n_frames: int) -> TrainState:
    params = RadianceFieldParams.create(bg_bounds, fg_bounds, n_frames,
                                        bg_resolution=config.bg_resolution,
                                        fg_resolution=config.fg_resolution,
                                        init_density=config.init_density, dtype=np.float32)
    return TrainState(params, AdamState.zeros_like(params), 0, np.random.default_rng(config.seed))


def _adam_rows(param: np.ndarray, m: np.ndarray, v: np.ndarray, rows: np.ndarray,
               grad: np.ndarray, config: TrainConfig, step: int) -> None:
    """In-place lazy Adam update of the given voxel rows of (V, 4) views."""
    g = grad[rows]
    m_rows = config.beta1 * m[rows].astype(np.float64) + (1.0 - config.beta1) * g
    v_rows = config.beta2 * v[rows].astype(np.float64) + (1.0 - config.beta2) * g * g
    m_hat = m_rows / (1.0 - config.beta1 ** step)
    v_hat = v_rows / (1.0 - config.beta2 ** step)
    update = config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    m[rows] = m_rows
    v[rows] = v_rows
    param[rows] = param[rows].astype(np.float64) - update


def adam_update(state: TrainState, grads: GradientAccumulator, config: TrainConfig) -> int:
    """
    Update only the voxels that received a gradient this step. Bias
    correction uses the global step count.

    Returns:
        Number of voxels updated.
    """
    step = state.iteration + 1
    params, adam = state.params, state.adam
    updated = 0
    if grads.bg is not None:
        rows = np.flatnonzero(grads.bg_touched)
        _adam_rows(params.bg_grid.reshape(-1, CHANNELS), adam.m_bg.reshape(-1, CHANNELS),
                   adam.v_bg.reshape(-1, CHANNELS), rows, grads.bg, config, step)
        updated += rows.size
    for t in sorted(grads.fg):
        rows = np.flatnonzero(grads.fg_touched[t])
        _adam_rows(params.fg_grids[t - 1].reshape(-1, CHANNELS),
                   adam.m_fg[t - 1].reshape(-1, CHANNELS),
                   adam.v_fg[t - 1].reshape(-1, CHANNELS), rows, grads.fg[t], config, step)
        updated += rows.size
    params.mark_updated()
    return updated


def _sr_patches(image: np.ndarray, pose: CameraPose, t: int, params: RadianceFieldParams,
                config: TrainConfig, rng: np.random.Generator):
    """Low-resolution rays over K random patches and their full-resolution references."""
    height, width = image.shape[:2]
    size = min(config.sr_patch_size, height - height % SR_FACTOR, width - width % SR_FACTOR)
    low = size // SR_FACTOR
    x0 = rng.integers(0, width - size + 1, size=config.sr_patches)
    y0 = rng.integers(0, height - size + 1, size=config.sr_patches)
    grid = SR_FACTOR * np.arange(low) + 0.5 * (SR_FACTOR - 1)
    px = (x0[:, None, None] + grid[None, None, :]).repeat(low, axis=1)
    py = (y0[:, None, None] + grid[None, :, None]).repeat(low, axis=2)
    rays = generate_rays(pose, px.reshape(-1), py.reshape(-1), t, params.bg_bounds)
    reference = np.stack([image[y:y + size, x:x + size] for x, y in zip(x0, y0)])
    return rays, reference, low


def train_step(state: TrainState, data: TrainingData,
               pseudo_gt: Dict[int, List[PseudoGTView]], config: TrainConfig) -> LossBreakdown:
    """
    One optimization step; mutates `state` in place.

    Raises:
        DivergedLoss: if the total loss is not finite; parameters are left untouched.
    """
    rng = state.rng
    params = state.params
    weights = config.loss_weights()
    iteration = state.iteration
    render_opts = dict(n_samples=config.n_samples, stratified=True, rng=rng,
                       chunk_size=config.chunk_size, workers=config.workers)
    grads = GradientAccumulator(params)

    t = int(rng.integers(1, data.n_frames + 1))
    image = data.images[t - 1]
    pose = data.poses[t - 1]
    height, width = image.shape[:2]

    # Primary rays.
    count = min(config.rays_per_iter_primary, height * width)
    chosen = rng.choice(height * width, size=count, replace=False)
    py, px = np.divmod(chosen, width)
    rays = generate_rays(pose, px, py, t, params.bg_bounds)
    out = render_rays(rays, params, RenderMode.FULL, **render_opts)
    rec = loss_rec(out.color, image[py, px])
    if weights.lambda_rec > 0:
        backward(out, params, grad_color=weights.lambda_rec * rec.grad,
                 accumulator=grads, workers=config.workers)

    # Super-resolution patches.
    sr_value = 0.0
    if config.sr_patches > 0:
        sr_rays, reference, low = _sr_patches(image, pose, t, params, config, rng)
        sr_out = render_rays(sr_rays, params, RenderMode.FULL, **render_opts)
        rendered = sr_out.color.reshape(config.sr_patches, low, low, 3)
        sr = loss_sr(rendered, reference, extractor=GradientFeatureExtractor())
        sr_value = sr.value
        if weights.lambda_sr > 0:
            backward(sr_out, params, grad_color=weights.lambda_sr * sr.grad.reshape(-1, 3),
                     accumulator=grads, workers=config.workers)

    # Temporal continuity over a sliding three-frame window.
    cont_value = 0.0
    if data.n_frames >= 3:
        cont = loss_cont(params, continuity_window_start(iteration, data.n_frames))
        cont_value = cont.value
        if weights.lambda_cont > 0:
            for frame, grad in sorted(cont.grads.items()):
                dense = np.zeros(grad.shape + (CHANNELS,))
                dense[..., 0] = weights.lambda_cont * grad
                grads.add_dense(frame, dense, grad != 0)

    # Pseudo ground truth at a symmetric pair of dome views.
    nv_c = nv_sigma = 0.0
    views = pseudo_gt.get(t)
    if weights.nv_active(iteration) and views:
        pair = symmetric_pair_indices(rng, [v.view for v in views])
        for index, n_rays in zip(pair, split_rays(config.rays_per_iter_nv, 2)):
            view = views[index]
            batch = sample_pixels(config.strategy, view.mask, n_rays, rng)
            nv_rays = generate_rays(view.pose, batch.px, batch.py, t, params.bg_bounds)
            nv_out = render_rays(nv_rays, params, RenderMode.FOREGROUND_ONLY, **render_opts)
            term = loss_nv(nv_out.color, nv_out.fg_opacity,
                           view.rgb[batch.py, batch.px], view.mask[batch.py, batch.px])
            nv_c += term.nv_c
            nv_sigma += term.nv_sigma
            if weights.lambda_c > 0 or weights.lambda_sigma > 0:
                backward(nv_out, params,
                         grad_color=weights.lambda_c * term.grad_color,
                         grad_fg_opacity=weights.lambda_sigma * term.grad_fg_opacity,
                         accumulator=grads, workers=config.workers)

    breakdown = total_loss(rec.value, cont_value, sr_value, nv_c, nv_sigma, weights, iteration)
    if not math.isfinite(breakdown.total):
        raise DivergedLoss(f"total loss is {breakdown.total} at iteration {iteration}")
    adam_update(state, grads, config)
    state.iteration += 1
    return breakdown


def save_checkpoint(state: TrainState, path: str) -> None:
    """
    Field section (see `field.write_params`) followed by the training state:
    tag, u64 iteration, u32 length + JSON generator state, then the four
    moment arrays as little-endian f32. Written to a temporary file and
    renamed into place.
    """
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        write_params(f, state.params)
        f.write(STATE_ADAM)
        f.write(struct.pack("<Q", state.iteration))
        rng_state = json.dumps(state.rng.bit_generator.state).encode("utf-8")
        f.write(struct.pack("<I", len(rng_state)))
        f.write(rng_state)
        for name in ("m_bg", "v_bg", "m_fg", "v_fg"):
            f.write(np.ascontiguousarray(getattr(state.adam, name), dtype="<f4").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path: str) -> TrainState:
    """
    Raises:
        BadMagic, VersionMismatch: on a foreign or newer file.
        CheckpointError: on truncation or an unknown state tag.
    """
    with open(path, "rb") as f:
        params = read_params(f)
        tag = read_exact(f, 4)
        if tag == STATE_NONE:
            return TrainState(params, AdamState.zeros_like(params), 0, np.random.default_rng())
        if tag != STATE_ADAM:
            raise CheckpointError(f"unknown state section {tag!r} in {path}")
        (iteration,) = struct.unpack("<Q", read_exact(f, 8))
        (size,) = struct.unpack("<I", read_exact(f, 4))
        try:
            rng_state = json.loads(read_exact(f, size).decode("utf-8"))
        except ValueError as e:
            raise CheckpointError(f"corrupt generator state in {path}: {e}")
        rng = np.random.default_rng()
        rng.bit_generator.state = rng_state
        moments = []
        for shape in (params.bg_grid.shape, params.bg_grid.shape,
                      params.fg_grids.shape, params.fg_grids.shape):
            count = int(np.prod(shape))
            raw = np.frombuffer(read_exact(f, 4 * count), dtype="<f4")
            moments.append(raw.astype(np.float32).reshape(shape))
    return TrainState(params, AdamState(*moments), int(iteration), rng)


def save_field(params: RadianceFieldParams, path: str) -> None:
    """Field-only checkpoint, loadable by `load_checkpoint` with fresh optimizer state."""
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        write_params(f, params)
        f.write(STATE_NONE)
    os.replace(tmp, path)


@dataclass
class TrainResult:
    state: TrainState
    checkpoint: str
    loss_log: str
    history: List[LossBreakdown]


def _open_loss_log(path: str, seed: int, resume_at: Optional[int] = None):
    """
    Open the loss log for writing. When resuming, rows logged at or after
    `resume_at` by an earlier run are dropped so the log never repeats an
    iteration.
    """
    if resume_at is not None and os.path.exists(path):
        with open(path, newline="") as f:
            lines = f.readlines()
        kept = [line for line in lines
                if line.startswith("#") or not line[:1].isdigit()
                or int(line.split(",", 1)[0]) < resume_at]
        if len(kept) < len(lines):
            logger.info("dropping %d loss rows past iteration %d from %s",
                        len(lines) - len(kept), resume_at, path)
        with open(path, "w", newline="") as f:
            f.writelines(kept)
        return open(path, "a", newline="")
    f = open(path, "w", newline="")
    f.write(f"# seed={seed}\n")
    csv.writer(f).writerow(LOSS_COLUMNS)
    return f


def checkpoint_path(out_dir: str, iteration: int) -> str:
    return os.path.join(out_dir, f"ckpt_{iteration:06d}.bin")


def train(config: TrainConfig, data_root: str, out_dir: str,
          pgt_root: Optional[str] = None, resume: Optional[str] = None,
          data: Optional[TrainingData] = None,
          pseudo_gt: Optional[Dict[int, List[PseudoGTView]]] = None) -> TrainResult:
    """
    Run `config.iterations` steps, writing `ckpt_{iteration}.bin` every
    `checkpoint_every` steps, `final.bin` at the end and the loss CSV
    `losses.csv`. With `resume` the run continues from that checkpoint and
    appends to the existing loss log, replacing any rows it had past the
    checkpoint.
    """
    config.validate()
    if data is None:
        data = load_training_data(data_root)
    if pseudo_gt is None:
        pseudo_gt = {}
        if pgt_root is not None:
            pseudo_gt = load_pseudo_gt_cache(pgt_root)
    weights = config.loss_weights()
    if not pseudo_gt and (weights.lambda_c > 0 or weights.lambda_sigma > 0):
        logger.warning("no pseudo ground truth available; novel-view terms stay at zero")

    os.makedirs(out_dir, exist_ok=True)
    if resume is not None:
        state = load_checkpoint(resume)
        logger.info("resuming from %s at iteration %d", resume, state.iteration)
    else:
        state = init_state(config, data.bg_bounds, data.fg_bounds, data.n_frames)
    logger.info("training seed=%d for %d iterations (nv terms from iteration %d)",
                config.seed, config.iterations, weights.nv_start_iteration)

    log_path = os.path.join(out_dir, "losses.csv")
    history: List[LossBreakdown] = []
    resume_at = state.iteration if resume is not None else None
    with _open_loss_log(log_path, config.seed, resume_at) as log_file:
        writer = csv.writer(log_file)
        progress = tqdm(range(state.iteration, config.iterations), desc="train", unit="it",
                        initial=state.iteration, total=config.iterations)
        for _ in progress:
            breakdown = train_step(state, data, pseudo_gt, config)
            history.append(breakdown)
            writer.writerow(breakdown.as_row())
            if state.iteration % config.log_every == 0:
                log_file.flush()
                tqdm.write(f"it {breakdown.iteration:6d} rec {breakdown.rec:.4f} "
                           f"cont {breakdown.cont:.4f} sr {breakdown.sr:.4f} "
                           f"nv_c {breakdown.nv_c:.4f} nv_sigma {breakdown.nv_sigma:.4f} "
                           f"total {breakdown.total:.4f}")
            if state.iteration % config.checkpoint_every == 0:
                save_checkpoint(state, checkpoint_path(out_dir, state.iteration))

    final = os.path.join(out_dir, "final.bin")
    save_checkpoint(state, final)
    logger.info("wrote %s", final)
    return TrainResult(state, final, log_path, history)
