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
Differentiable emission-absorption rendering of the two-branch grid field,
with hand-derived gradients of any weighted sum of the per-ray outputs
(color, opacity, foreground opacity) with respect to the raw grid values.

Rays are processed in fixed-size chunks. Chunks may run on a thread pool,
but gradient contributions are always merged in chunk order, so results do
not depend on the number of workers.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Tuple
import logging

import numpy as np

from domefield.errors import EmptyInterval, StaleCache
from domefield.field import (
    COMPOSITE_EPS, CHANNELS, FieldSample, Interpolation, RadianceFieldParams,
    activate, check_frame, interpolate_raw, sigmoid, trilinear,
)
from domefield.geometry import CameraPose, Ray, RayBatch, image_rays

logger = logging.getLogger(__name__)

DEFAULT_SAMPLES = 128
DEFAULT_CHUNK = 1024


class RenderMode(Enum):
    FULL = "full"
    FOREGROUND_ONLY = "foreground_only"


def march_intervals(t_near: np.ndarray, t_far: np.ndarray, n_samples: int,
                    jitter: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Split each [t_near, t_far] into n_samples equal bins.

    Returns:
        (t_vals, deltas), both (R, n_samples). Without jitter samples sit at
        bin midpoints; with jitter in [0, 1) they move inside their bin.
        Deltas are the bin widths, so they sum to the interval length.
    """
    if n_samples < 2:
        raise ValueError(f"at least 2 samples per ray are required, got {n_samples}")
    t_near = np.asarray(t_near, dtype=np.float64)
    t_far = np.asarray(t_far, dtype=np.float64)
    width = (t_far - t_near) / n_samples
    offsets = np.arange(n_samples, dtype=np.float64)[None, :]
    offsets = offsets + (0.5 if jitter is None else jitter)
    t_vals = t_near[:, None] + offsets * width[:, None]
    deltas = np.repeat(width[:, None], n_samples, axis=1)
    return t_vals, deltas


def march(ray: Ray, n_samples: int, stratified: bool = False,
          rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Sample positions and segment lengths along one ray.

    Raises:
        EmptyInterval: if the ray interval is empty.
    """
    if not ray.t_far > ray.t_near:
        raise EmptyInterval(f"empty ray interval [{ray.t_near}, {ray.t_far}]")
    jitter = None
    if stratified:
        rng = rng if rng is not None else np.random.default_rng()
        jitter = rng.random((1, n_samples))
    t_vals, deltas = march_intervals(np.array([ray.t_near]), np.array([ray.t_far]),
                                     n_samples, jitter)
    return ray.at(t_vals[0]), deltas[0]


@dataclass
class RayRender:
    color: np.ndarray
    opacity: float
    fg_opacity: float


@dataclass
class _Branch:
    interp: Interpolation
    raw: np.ndarray
    sample: FieldSample


@dataclass
class _ChunkCache:
    start: int
    stop: int
    deltas: np.ndarray
    fg: _Branch
    bg: Optional[_Branch]
    density: np.ndarray
    color: np.ndarray
    trans: np.ndarray
    weights: np.ndarray
    trans_final: np.ndarray
    fg_trans_final: np.ndarray
    out_color: np.ndarray


@dataclass
class RenderOutput:
    """
    Per-ray results of a batch plus the caches needed by `backward`.

    Attributes:
        color: (R, 3) composited color.
        opacity: (R,) one minus the final transmittance of the rendered mode.
        fg_opacity: (R,) foreground-only accumulated opacity.
    """
    color: np.ndarray
    opacity: np.ndarray
    fg_opacity: np.ndarray
    mode: RenderMode
    frame_time: int
    params_id: int
    params_version: int
    chunks: List[_ChunkCache]


@dataclass
class ImageRender:
    rgb: np.ndarray
    opacity: np.ndarray
    fg_opacity: np.ndarray


def _exclusive_transmittance(tau: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    cumulative = np.cumsum(tau, axis=1)
    trans = np.exp(-(cumulative - tau))
    return trans, np.exp(-cumulative[:, -1])


def _query_branch(points: np.ndarray, grid: np.ndarray, bounds) -> _Branch:
    interp = trilinear(points, bounds, tuple(grid.shape[:3]))
    raw = interpolate_raw(grid, interp)
    return _Branch(interp, raw, activate(raw, interp.inside))


def _forward_chunk(rays: RayBatch, start: int, stop: int, params: RadianceFieldParams,
                   mode: RenderMode, n_samples: int,
                   jitter: Optional[np.ndarray]) -> _ChunkCache:
    chunk = rays.subset(slice(start, stop))
    t_vals, deltas = march_intervals(chunk.t_near, chunk.t_far, n_samples, jitter)
    deltas = np.where(chunk.hit[:, None], deltas, 0.0).astype(params.dtype)
    points = chunk.origins[:, None, :] + t_vals[..., None] * chunk.directions[:, None, :]
    shape = deltas.shape

    fg = _query_branch(points, params.frame_grid(rays.frame_time), params.fg_bounds)
    fg_density = fg.sample.density.reshape(shape)
    fg_color = fg.sample.color.reshape(shape + (3,))

    bg = None
    if mode is RenderMode.FULL:
        bg = _query_branch(points, params.bg_grid, params.bg_bounds)
        bg_density = bg.sample.density.reshape(shape)
        bg_color = bg.sample.color.reshape(shape + (3,))
        density = bg_density + fg_density
        color = ((bg_density[..., None] * bg_color + fg_density[..., None] * fg_color)
                 / (density[..., None] + COMPOSITE_EPS))
    else:
        density = fg_density
        color = fg_color

    tau = density * deltas
    trans, trans_final = _exclusive_transmittance(tau)
    alpha = -np.expm1(-tau)
    weights = trans * alpha
    out_color = np.einsum("rs,rsc->rc", weights, color)
    if mode is RenderMode.FULL:
        _, fg_trans_final = _exclusive_transmittance(fg_density * deltas)
    else:
        fg_trans_final = trans_final

    return _ChunkCache(start, stop, deltas, fg, bg, density, color, trans, weights,
                       trans_final, fg_trans_final, out_color)


def _map_ordered(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def render_rays(rays: RayBatch, params: RadianceFieldParams,
                mode: RenderMode = RenderMode.FULL, n_samples: int = DEFAULT_SAMPLES,
                stratified: bool = False, rng: Optional[np.random.Generator] = None,
                chunk_size: int = DEFAULT_CHUNK, workers: int = 1) -> RenderOutput:
    """
    Render a batch of rays of frame `rays.frame_time`.

    Args:
        rays: the rays; misses render as empty space.
        params: field parameters, read only during the call.
        mode: FULL composites both branches; FOREGROUND_ONLY queries only the
            foreground and composites over black.
        n_samples: samples per ray.
        stratified: jitter samples inside their bins (needs `rng`).
        rng: generator for the jitter; drawn once for the whole batch.
        chunk_size: rays per chunk.
        workers: threads used for chunks.

    Returns:
        RenderOutput with per-ray color, opacity, foreground opacity and caches.
    """
    check_frame(rays.frame_time, params.n_frames)
    n_rays = len(rays)
    jitter = None
    if stratified:
        if rng is None:
            raise ValueError("stratified sampling requires an rng")
        jitter = rng.random((n_rays, n_samples))

    bounds = [(s, min(s + chunk_size, n_rays)) for s in range(0, n_rays, chunk_size)]
    chunks = _map_ordered(
        lambda b: _forward_chunk(rays, b[0], b[1], params, mode, n_samples,
                                 None if jitter is None else jitter[b[0]:b[1]]),
        bounds, workers)

    if chunks:
        color = np.concatenate([c.out_color for c in chunks])
        opacity = 1.0 - np.concatenate([c.trans_final for c in chunks])
        fg_opacity = 1.0 - np.concatenate([c.fg_trans_final for c in chunks])
    else:
        color = np.zeros((0, 3), dtype=params.dtype)
        opacity = fg_opacity = np.zeros(0, dtype=params.dtype)
    return RenderOutput(color, opacity, fg_opacity, mode, rays.frame_time,
                        id(params), params.version, chunks)


def render_ray(ray: Ray, params: RadianceFieldParams, t: int,
               mode: RenderMode = RenderMode.FULL, n_samples: int = DEFAULT_SAMPLES,
               stratified: bool = False, rng: Optional[np.random.Generator] = None) -> RayRender:
    if not ray.t_far > ray.t_near:
        raise EmptyInterval(f"empty ray interval [{ray.t_near}, {ray.t_far}]")
    batch = RayBatch.from_rays([ray])
    batch.frame_time = int(t)
    out = render_rays(batch, params, mode, n_samples, stratified, rng)
    return RayRender(color=out.color[0], opacity=float(out.opacity[0]),
                     fg_opacity=float(out.fg_opacity[0]))


def render_image(pose: CameraPose, params: RadianceFieldParams, t: int,
                 mode: RenderMode = RenderMode.FULL, n_samples: int = DEFAULT_SAMPLES,
                 chunk_size: int = DEFAULT_CHUNK, workers: int = 1) -> ImageRender:
    """Render every pixel of `pose` with deterministic midpoint sampling."""
    k = pose.intrinsics
    rays = image_rays(pose, t, params.bg_bounds)
    out = render_rays(rays, params, mode, n_samples, chunk_size=chunk_size, workers=workers)
    return ImageRender(rgb=out.color.reshape(k.height, k.width, 3),
                       opacity=out.opacity.reshape(k.height, k.width),
                       fg_opacity=out.fg_opacity.reshape(k.height, k.width))


class GradientAccumulator:
    """
    Dense float64 gradient buffers over the raw parameters, with a mask of
    the voxels that received a contribution ("touched" voxels).
    """

    def __init__(self, params: RadianceFieldParams):
        self.bg_voxels = int(np.prod(params.bg_resolution))
        self.fg_voxels = int(np.prod(params.fg_resolution))
        self.n_frames = params.n_frames
        self.bg: Optional[np.ndarray] = None
        self.bg_touched: Optional[np.ndarray] = None
        self.fg: Dict[int, np.ndarray] = {}
        self.fg_touched: Dict[int, np.ndarray] = {}

    def _buffers(self, t: Optional[int]) -> Tuple[np.ndarray, np.ndarray]:
        if t is None:
            if self.bg is None:
                self.bg = np.zeros((self.bg_voxels, CHANNELS))
                self.bg_touched = np.zeros(self.bg_voxels, dtype=bool)
            return self.bg, self.bg_touched
        check_frame(t, self.n_frames)
        if t not in self.fg:
            self.fg[t] = np.zeros((self.fg_voxels, CHANNELS))
            self.fg_touched[t] = np.zeros(self.fg_voxels, dtype=bool)
        return self.fg[t], self.fg_touched[t]

    def add_sparse(self, t: Optional[int], indices: np.ndarray, values: np.ndarray) -> None:
        """Scatter-add (M,) voxel indices with (M, 4) values; t=None is the background."""
        grad, touched = self._buffers(t)
        if indices.size == 0:
            return
        for c in range(CHANNELS):
            grad[:, c] += np.bincount(indices, weights=values[:, c], minlength=grad.shape[0])
        touched[indices] = True

    def add_dense(self, t: Optional[int], values: np.ndarray, touched_mask: np.ndarray) -> None:
        grad, touched = self._buffers(t)
        grad += values.reshape(grad.shape)
        touched |= touched_mask.reshape(touched.shape)

    def merge(self, other: GradientAccumulator) -> None:
        if other.bg is not None:
            self.add_dense(None, other.bg, other.bg_touched)
        for t in sorted(other.fg):
            self.add_dense(t, other.fg[t], other.fg_touched[t])

    def as_arrays(self, params: RadianceFieldParams) -> Tuple[np.ndarray, np.ndarray]:
        """Dense gradients shaped like bg_grid and fg_grids (zeros where untouched)."""
        bg = np.zeros(params.bg_grid.shape)
        fg = np.zeros(params.fg_grids.shape)
        if self.bg is not None:
            bg[...] = self.bg.reshape(bg.shape)
        for t, values in self.fg.items():
            fg[t - 1] = values.reshape(fg.shape[1:])
        return bg, fg


def _branch_raw_gradient(branch: _Branch, grad_density: np.ndarray, grad_color: np.ndarray,
                         valid: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Chain rule through activation and trilinear weights; returns flat (indices, values)."""
    raw_grad = np.empty((grad_density.shape[0], CHANNELS))
    raw_grad[:, 0] = grad_density * sigmoid(branch.raw[:, 0])
    color = branch.sample.color
    raw_grad[:, 1:] = grad_color * color * (1.0 - color)
    keep = valid & branch.interp.inside
    raw_grad = raw_grad[keep]
    weights = branch.interp.weights[keep]
    indices = branch.interp.indices[keep]
    values = weights[:, :, None] * raw_grad[:, None, :]
    nonzero = (weights > 0).reshape(-1)
    return indices.reshape(-1)[nonzero], values.reshape(-1, CHANNELS)[nonzero]


def _backward_chunk(cache: _ChunkCache, mode: RenderMode, grad_color: np.ndarray,
                    grad_opacity: np.ndarray, grad_fg_opacity: np.ndarray):
    g_color = grad_color[cache.start:cache.stop]
    g_opacity = grad_opacity[cache.start:cache.stop]
    g_fg_opacity = grad_fg_opacity[cache.start:cache.stop]
    deltas = cache.deltas.astype(np.float64)
    density = cache.density.astype(np.float64)
    color = cache.color.astype(np.float64)
    trans = cache.trans.astype(np.float64)
    weights = cache.weights.astype(np.float64)
    trans_final = cache.trans_final.astype(np.float64)
    shape = deltas.shape

    # d color / d tau_k = T_{k+1} c_k - sum_{i>k} w_i c_i ; d opacity / d tau_k = T_final
    trans_next = trans * np.exp(-density * deltas)
    weighted = weights[..., None] * color
    behind = np.cumsum(weighted[:, ::-1], axis=1)[:, ::-1] - weighted
    g_tau = np.einsum("rc,rsc->rs", g_color, trans_next[..., None] * color - behind)
    if mode is RenderMode.FULL:
        g_tau += (g_opacity * trans_final)[:, None]
    else:
        g_tau += ((g_opacity + g_fg_opacity) * trans_final)[:, None]
    g_density = g_tau * deltas
    g_point_color = g_color[:, None, :] * weights[..., None]
    valid = (deltas > 0).reshape(-1)

    fg_density = cache.fg.sample.density.reshape(shape).astype(np.float64)
    fg_color = cache.fg.sample.color.reshape(shape + (3,)).astype(np.float64)
    if mode is RenderMode.FULL:
        bg_density = cache.bg.sample.density.reshape(shape).astype(np.float64)
        bg_color = cache.bg.sample.color.reshape(shape + (3,)).astype(np.float64)
        norm = density + COMPOSITE_EPS
        g_bg_density = g_density + np.einsum("rsc,rsc->rs", g_point_color, bg_color - color) / norm
        g_fg_density = g_density + np.einsum("rsc,rsc->rs", g_point_color, fg_color - color) / norm
        g_fg_density += (g_fg_opacity * cache.fg_trans_final.astype(np.float64))[:, None] * deltas
        g_bg_color = g_point_color * (bg_density / norm)[..., None]
        g_fg_color = g_point_color * (fg_density / norm)[..., None]
        bg_part = _branch_raw_gradient(cache.bg, g_bg_density.reshape(-1),
                                       g_bg_color.reshape(-1, 3), valid)
    else:
        g_fg_density = g_density
        g_fg_color = g_point_color
        bg_part = None
    fg_part = _branch_raw_gradient(cache.fg, g_fg_density.reshape(-1),
                                   g_fg_color.reshape(-1, 3), valid)
    return bg_part, fg_part


def backward(output: RenderOutput, params: RadianceFieldParams,
             grad_color: Optional[np.ndarray] = None,
             grad_opacity: Optional[np.ndarray] = None,
             grad_fg_opacity: Optional[np.ndarray] = None,
             accumulator: Optional[GradientAccumulator] = None,
             workers: int = 1) -> GradientAccumulator:
    """
    Gradient of sum_r (grad_color[r] . color[r] + grad_opacity[r] * opacity[r]
    + grad_fg_opacity[r] * fg_opacity[r]) with respect to the raw parameters.

    Raises:
        StaleCache: if `params` changed since `output` was rendered.
    """
    if output.params_id != id(params) or output.params_version != params.version:
        raise StaleCache("parameters changed since the forward pass; re-render first")
    n_rays = output.color.shape[0]
    grad_color = np.zeros((n_rays, 3)) if grad_color is None else np.asarray(grad_color, np.float64)
    grad_opacity = np.zeros(n_rays) if grad_opacity is None else np.asarray(grad_opacity, np.float64)
    grad_fg_opacity = (np.zeros(n_rays) if grad_fg_opacity is None
                       else np.asarray(grad_fg_opacity, np.float64))
    if grad_color.shape != (n_rays, 3) or grad_opacity.shape != (n_rays,) \
            or grad_fg_opacity.shape != (n_rays,):
        raise ValueError("gradient weights must match the rendered batch")

    accumulator = accumulator if accumulator is not None else GradientAccumulator(params)
    parts = _map_ordered(
        lambda cache: _backward_chunk(cache, output.mode, grad_color, grad_opacity,
                                      grad_fg_opacity),
        output.chunks, workers)
    for bg_part, fg_part in parts:
        if bg_part is not None:
            accumulator.add_sparse(None, *bg_part)
        accumulator.add_sparse(output.frame_time, *fg_part)
    return accumulator
