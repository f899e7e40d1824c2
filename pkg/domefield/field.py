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
The optimized scene representation: one static background grid and one
foreground grid per frame, each voxel holding a raw density and three raw
color values. Raw values are trilinearly interpolated between voxel centers
and then activated (softplus for density, sigmoid for color).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import BinaryIO, Sequence, Tuple, Union
import logging
import struct

import numpy as np
from scipy.special import expit

from domefield.errors import BadMagic, CheckpointError, FrameOutOfRange, VersionMismatch
from domefield.geometry import Box

logger = logging.getLogger(__name__)

COMPOSITE_EPS = 1e-8
CHANNELS = 4  # raw density + raw rgb

MAGIC = b"EXDN"
FORMAT_VERSION = 1

Resolution = Tuple[int, int, int]


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inverse(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def sigmoid(x):
    return expit(x)


def _as_resolution(resolution: Union[int, Sequence[int]]) -> Resolution:
    if np.isscalar(resolution):
        resolution = (int(resolution),) * 3
    resolution = tuple(int(r) for r in resolution)
    if len(resolution) != 3 or min(resolution) < 1:
        raise ValueError(f"invalid grid resolution {resolution}")
    return resolution


@dataclass
class FieldSample:
    """Activated color in [0,1]^3 and density >= 0; arrays may be batched."""
    color: np.ndarray
    density: np.ndarray


class RadianceFieldParams:
    """
    Raw grid parameters of both branches.

    Attributes:
        bg_grid: (X, Y, Z, 4) raw values over `bg_bounds`.
        fg_grids: (N, X, Y, Z, 4) raw values over `fg_bounds`, frame t at index t - 1.
        version: bumped on every in-place update; render caches remember it.
    """

    def __init__(self, bg_grid: np.ndarray, fg_grids: np.ndarray,
                 bg_bounds: Box, fg_bounds: Box):
        if bg_grid.ndim != 4 or bg_grid.shape[-1] != CHANNELS:
            raise ValueError(f"background grid must be (X, Y, Z, 4), got {bg_grid.shape}")
        if fg_grids.ndim != 5 or fg_grids.shape[-1] != CHANNELS:
            raise ValueError(f"foreground grids must be (N, X, Y, Z, 4), got {fg_grids.shape}")
        if fg_grids.shape[0] < 1:
            raise ValueError("at least one foreground frame is required")
        if bg_grid.dtype != fg_grids.dtype:
            raise ValueError("background and foreground grids must share a dtype")
        self.bg_grid = bg_grid
        self.fg_grids = fg_grids
        self.bg_bounds = bg_bounds
        self.fg_bounds = fg_bounds
        self.version = 0

    def __repr__(self) -> str:
        return (f"RadianceFieldParams(bg={self.bg_resolution}, fg={self.fg_resolution}, "
                f"frames={self.n_frames}, dtype={self.dtype})")

    @classmethod
    def create(cls, bg_bounds: Box, fg_bounds: Box, n_frames: int,
               bg_resolution: Union[int, Sequence[int]] = 96,
               fg_resolution: Union[int, Sequence[int]] = 48,
               init_density: float = 0.01, dtype=np.float32) -> RadianceFieldParams:
        """Near-empty initialization: density softplus^-1(init_density), mid-gray color."""
        bg_res = _as_resolution(bg_resolution)
        fg_res = _as_resolution(fg_resolution)
        raw_density = float(softplus_inverse(init_density))
        bg_grid = np.zeros(bg_res + (CHANNELS,), dtype=dtype)
        fg_grids = np.zeros((int(n_frames),) + fg_res + (CHANNELS,), dtype=dtype)
        bg_grid[..., 0] = raw_density
        fg_grids[..., 0] = raw_density
        return cls(bg_grid, fg_grids, bg_bounds, fg_bounds)

    @property
    def n_frames(self) -> int:
        return self.fg_grids.shape[0]

    @property
    def dtype(self):
        return self.bg_grid.dtype

    @property
    def bg_resolution(self) -> Resolution:
        return tuple(self.bg_grid.shape[:3])

    @property
    def fg_resolution(self) -> Resolution:
        return tuple(self.fg_grids.shape[1:4])

    def frame_grid(self, t: int) -> np.ndarray:
        check_frame(t, self.n_frames)
        return self.fg_grids[t - 1]

    def mark_updated(self) -> None:
        self.version += 1

    def copy(self) -> RadianceFieldParams:
        return RadianceFieldParams(self.bg_grid.copy(), self.fg_grids.copy(),
                                   self.bg_bounds, self.fg_bounds)

    def equals(self, other: RadianceFieldParams) -> bool:
        return (self.bg_bounds == other.bg_bounds and self.fg_bounds == other.fg_bounds
                and self.bg_grid.dtype == other.bg_grid.dtype
                and np.array_equal(self.bg_grid, other.bg_grid)
                and np.array_equal(self.fg_grids, other.fg_grids))


def check_frame(t: int, n_frames: int) -> None:
    if not 1 <= t <= n_frames:
        raise FrameOutOfRange(f"frame {t} outside [1, {n_frames}]")


@dataclass
class Interpolation:
    """Flat voxel indices and trilinear weights of P points, 8 corners each."""
    indices: np.ndarray
    weights: np.ndarray
    inside: np.ndarray


def trilinear(points: np.ndarray, bounds: Box, resolution: Resolution) -> Interpolation:
    """
    Trilinear corner lookup with voxel centers at lo + (i + 0.5) * size / res.
    Points between the outermost centers and the box faces clamp to the
    outermost layer; points outside the box are flagged.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    res = np.asarray(resolution)
    u = (points - bounds.lo) / bounds.size * res - 0.5
    u = np.clip(u, 0.0, res - 1)
    base = np.clip(np.floor(u), 0, np.maximum(res - 2, 0)).astype(np.int64)
    frac = u - base
    upper = np.minimum(base + 1, res - 1)

    corner_indices = []
    corner_weights = []
    for cx in (0, 1):
        ix = upper[:, 0] if cx else base[:, 0]
        wx = frac[:, 0] if cx else 1.0 - frac[:, 0]
        for cy in (0, 1):
            iy = upper[:, 1] if cy else base[:, 1]
            wy = frac[:, 1] if cy else 1.0 - frac[:, 1]
            for cz in (0, 1):
                iz = upper[:, 2] if cz else base[:, 2]
                wz = frac[:, 2] if cz else 1.0 - frac[:, 2]
                corner_indices.append((ix * res[1] + iy) * res[2] + iz)
                corner_weights.append(wx * wy * wz)

    inside = bounds.contains(points)
    return Interpolation(np.stack(corner_indices, axis=1),
                         np.stack(corner_weights, axis=1),
                         inside)


def interpolate_raw(grid: np.ndarray, interp: Interpolation) -> np.ndarray:
    """Raw (P, 4) values; rows for outside points are meaningless and masked later."""
    flat = grid.reshape(-1, CHANNELS)
    weights = interp.weights.astype(grid.dtype, copy=False)
    return np.einsum("pk,pkc->pc", weights, flat[interp.indices])


def activate(raw: np.ndarray, inside: np.ndarray) -> FieldSample:
    density = np.where(inside, softplus(raw[:, 0]), 0.0).astype(raw.dtype, copy=False)
    color = np.where(inside[:, None], sigmoid(raw[:, 1:]), 0.0).astype(raw.dtype, copy=False)
    return FieldSample(color=color, density=density)


def _query(points, grid: np.ndarray, bounds: Box) -> FieldSample:
    points = np.asarray(points, dtype=np.float64)
    batch_shape = points.shape[:-1]
    interp = trilinear(points, bounds, tuple(grid.shape[:3]))
    sample = activate(interpolate_raw(grid, interp), interp.inside)
    return FieldSample(color=sample.color.reshape(batch_shape + (3,)),
                       density=sample.density.reshape(batch_shape))


def query_background(points, params: RadianceFieldParams) -> FieldSample:
    """Background sample at one point (3,) or many (..., 3)."""
    return _query(points, params.bg_grid, params.bg_bounds)


def query_foreground(points, t: int, params: RadianceFieldParams) -> FieldSample:
    """
    Foreground sample of frame t (1-based).

    Raises:
        FrameOutOfRange: if t is not in [1, N].
    """
    return _query(points, params.frame_grid(t), params.fg_bounds)


def composite_branches(bg: FieldSample, fg: FieldSample) -> FieldSample:
    """Densities add; colors blend by density. Both empty gives black."""
    density = bg.density + fg.density
    numerator = (bg.density[..., None] * bg.color + fg.density[..., None] * fg.color)
    color = numerator / (density[..., None] + COMPOSITE_EPS)
    return FieldSample(color=color, density=density)


def write_params(stream: BinaryIO, params: RadianceFieldParams) -> None:
    """
    Binary layout: magic, u32 version, 12 f64 bounds (bg lo/hi, fg lo/hi),
    6 u32 resolutions (bg, fg), u32 N, then the background grid and the
    frames in ascending t as little-endian f32.
    """
    stream.write(MAGIC)
    stream.write(struct.pack("<I", FORMAT_VERSION))
    stream.write(struct.pack("<12d", *(params.bg_bounds.to_list() + params.fg_bounds.to_list())))
    stream.write(struct.pack("<6I", *(params.bg_resolution + params.fg_resolution)))
    stream.write(struct.pack("<I", params.n_frames))
    stream.write(np.ascontiguousarray(params.bg_grid, dtype="<f4").tobytes())
    stream.write(np.ascontiguousarray(params.fg_grids, dtype="<f4").tobytes())


def read_exact(stream: BinaryIO, size: int) -> bytes:
    data = stream.read(size)
    if len(data) != size:
        raise CheckpointError(f"truncated file: wanted {size} bytes, got {len(data)}")
    return data


def read_params(stream: BinaryIO) -> RadianceFieldParams:
    """
    Raises:
        BadMagic: if the stream does not start with the magic bytes.
        VersionMismatch: on an unknown format version.
        CheckpointError: on truncation.
    """
    magic = stream.read(len(MAGIC))
    if magic != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, got {magic!r}")
    (version,) = struct.unpack("<I", read_exact(stream, 4))
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"unsupported format version {version}, expected {FORMAT_VERSION}")
    bounds = struct.unpack("<12d", read_exact(stream, 96))
    resolutions = struct.unpack("<6I", read_exact(stream, 24))
    (n_frames,) = struct.unpack("<I", read_exact(stream, 4))

    bg_res, fg_res = resolutions[:3], resolutions[3:]
    bg_count = int(np.prod(bg_res)) * CHANNELS
    fg_count = n_frames * int(np.prod(fg_res)) * CHANNELS
    bg_grid = np.frombuffer(read_exact(stream, 4 * bg_count), dtype="<f4")
    fg_grids = np.frombuffer(read_exact(stream, 4 * fg_count), dtype="<f4")
    return RadianceFieldParams(
        bg_grid.astype(np.float32).reshape(bg_res + (CHANNELS,)),
        fg_grids.astype(np.float32).reshape((n_frames,) + fg_res + (CHANNELS,)),
        Box.from_list(bounds[:6]), Box.from_list(bounds[6:]))
