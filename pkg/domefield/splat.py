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
Object-centric Gaussian prior: fitting, EWA projection, alpha-composited
rasterization and generation of the pseudo ground truth used to supervise
novel dome views.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Protocol, Sequence, Tuple
import json
import logging
import math
import os

import numpy as np
from scipy.spatial.transform import Rotation
from tqdm import tqdm

from domefield import imaging
from domefield.errors import BehindCamera, DegenerateObject
from domefield.geometry import (
    DEFAULT_BEARING, WORLD_UP, CameraPose, DomeView, Intrinsics,
    alignment_transform, apply_transform, dome_grid,
)

logger = logging.getLogger(__name__)

SCALE_FACTOR = 1.5
PRIOR_OPACITY = 0.9
COV2D_FLOOR = 0.3
MIN_DEPTH = 1e-6
CUTOFF_MAHALANOBIS_SQ = 9.0  # 3 sigma
PIXEL_CHUNK = 1024
CACHE_SCHEMA = 1


class SurfaceObject(Protocol):
    """What the prior fitter needs to know about an object, in its local frame."""

    @property
    def surface_area(self) -> float: ...

    @property
    def diameter(self) -> float: ...

    def sample_surface(self, rng: np.random.Generator, n: int) -> np.ndarray: ...

    def albedo(self, points: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True, eq=False)
class GaussianSet:
    """
    Attributes:
        means: (G, 3) centers in the object-local frame.
        scales: (G, 3) standard deviations along the primitive axes.
        quats: (G, 4) unit quaternions, scalar last (x, y, z, w).
        opacities: (G,) peak opacity in (0, 1].
        rgbs: (G, 3) colors in [0, 1].
    """
    means: np.ndarray
    scales: np.ndarray
    quats: np.ndarray
    opacities: np.ndarray
    rgbs: np.ndarray

    def __post_init__(self):
        n = len(self.means)
        shapes = {"means": (n, 3), "scales": (n, 3), "quats": (n, 4),
                  "opacities": (n,), "rgbs": (n, 3)}
        for name, shape in shapes.items():
            value = np.asarray(getattr(self, name), dtype=np.float64)
            if value.shape != shape:
                raise ValueError(f"{name} must be shaped {shape}, got {value.shape}")
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        if np.any(self.scales <= 0):
            raise ValueError("Gaussian scales must be positive")
        if np.any(np.abs(np.linalg.norm(self.quats, axis=1) - 1.0) > 1e-9):
            raise ValueError("Gaussian orientations must be unit quaternions")
        if np.any(self.opacities <= 0) or np.any(self.opacities > 1):
            raise ValueError("Gaussian opacities must lie in (0, 1]")

    def __len__(self) -> int:
        return self.means.shape[0]

    def covariances(self) -> np.ndarray:
        """(G, 3, 3) covariances R diag(s^2) R^T in the object frame."""
        rotations = Rotation.from_quat(self.quats).as_matrix()
        return np.einsum("gij,gj,gkj->gik", rotations, self.scales ** 2, rotations)

    def subset(self, selection) -> GaussianSet:
        return GaussianSet(self.means[selection], self.scales[selection], self.quats[selection],
                           self.opacities[selection], self.rgbs[selection])

    def save(self, path: str) -> None:
        np.savez(path, means=self.means, scales=self.scales, quats=self.quats,
                 opacities=self.opacities, rgbs=self.rgbs)

    @classmethod
    def load(cls, path: str) -> GaussianSet:
        with np.load(path) as data:
            return cls(data["means"], data["scales"], data["quats"],
                       data["opacities"], data["rgbs"])


def fit_prior(obj: SurfaceObject, n_gaussians: int, rng: np.random.Generator,
              scale_factor: float = SCALE_FACTOR, opacity: float = PRIOR_OPACITY) -> GaussianSet:
    """
    Isotropic Gaussians centered on surface samples of `obj`, sized
    scale_factor * diameter / sqrt(n) and colored by the surface albedo.

    Raises:
        DegenerateObject: if the object has no surface.
    """
    if n_gaussians < 1:
        raise ValueError(f"at least one Gaussian is required, got {n_gaussians}")
    if not obj.surface_area > 0:
        raise DegenerateObject(f"object surface area is {obj.surface_area}")
    means = obj.sample_surface(rng, n_gaussians)
    scale = scale_factor * obj.diameter / math.sqrt(n_gaussians)
    quats = np.tile([0.0, 0.0, 0.0, 1.0], (n_gaussians, 1))
    logger.info("fitted %d Gaussians with scale %.4f", n_gaussians, scale)
    return GaussianSet(means=means,
                       scales=np.full((n_gaussians, 3), scale),
                       quats=quats,
                       opacities=np.full(n_gaussians, opacity),
                       rgbs=np.clip(obj.albedo(means), 0.0, 1.0))


@dataclass
class Splat2D:
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float


def _project(means: np.ndarray, covariances: np.ndarray,
             pose: CameraPose) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Raster-space means, 2D covariances and depths; entries with depth <= MIN_DEPTH are junk."""
    k = pose.intrinsics
    rotation = pose.rotation
    cam = (means - pose.eye) @ rotation
    depth = -cam[:, 2]
    safe = np.where(depth > MIN_DEPTH, depth, 1.0)
    x, y = cam[:, 0], cam[:, 1]

    mean2d = np.stack([k.cx + k.fx * x / safe, k.cy - k.fy * y / safe], axis=1)
    jacobian = np.zeros((means.shape[0], 2, 3))
    jacobian[:, 0, 0] = k.fx / safe
    jacobian[:, 0, 2] = k.fx * x / safe ** 2
    jacobian[:, 1, 1] = -k.fy / safe
    jacobian[:, 1, 2] = -k.fy * y / safe ** 2
    cov_cam = np.einsum("ji,gjk,kl->gil", rotation, covariances, rotation)
    cov2d = np.einsum("gij,gjk,glk->gil", jacobian, cov_cam, jacobian)
    cov2d += COV2D_FLOOR * np.eye(2)
    return mean2d, cov2d, depth


def project_gaussian(mean, scale, quat, pose: CameraPose) -> Splat2D:
    """
    Project one primitive. Raster coordinates put pixel (i, j) at (i + 0.5, j + 0.5).

    Raises:
        BehindCamera: if the center is not in front of the camera.
    """
    single = GaussianSet(np.reshape(mean, (1, 3)), np.reshape(scale, (1, 3)),
                         np.reshape(quat, (1, 4)), np.ones(1), np.zeros((1, 3)))
    mean2d, cov2d, depth = _project(single.means, single.covariances(), pose)
    if not depth[0] > MIN_DEPTH:
        raise BehindCamera(f"Gaussian at depth {depth[0]:.3g} is behind the camera")
    return Splat2D(mean2d[0], cov2d[0], float(depth[0]))


@dataclass
class PseudoView:
    """Premultiplied RGB over black and alpha mask, rendered at `pose`."""
    pose: CameraPose
    rgb: np.ndarray
    mask: np.ndarray


def splat_alphas(mean2d: np.ndarray, cov2d: np.ndarray, opacities: np.ndarray,
                 pixels: np.ndarray, clip: bool = True) -> np.ndarray:
    """(G, P) alpha of every splat at every pixel center."""
    inv = np.linalg.inv(cov2d)
    d = pixels[None, :, :] - mean2d[:, None, :]
    maha = (inv[:, 0, 0, None] * d[..., 0] ** 2
            + 2.0 * inv[:, 0, 1, None] * d[..., 0] * d[..., 1]
            + inv[:, 1, 1, None] * d[..., 1] ** 2)
    alpha = opacities[:, None] * np.exp(-0.5 * maha)
    if clip:
        alpha = np.where(maha <= CUTOFF_MAHALANOBIS_SQ, alpha, 0.0)
    return alpha


def composite_back_to_front(alpha: np.ndarray, rgbs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Composite splats already ordered far to near.

    Returns:
        (rgb (P, 3), mask (P,)) with rgb premultiplied by coverage.
    """
    keep = 1.0 - alpha
    # Transmittance in front of splat k is the product over the nearer splats k+1..G-1.
    in_front = np.cumprod(keep[::-1], axis=0)[::-1]
    in_front = np.concatenate([in_front[1:], np.ones((1, alpha.shape[1]))], axis=0)
    contribution = alpha * in_front
    rgb = contribution.T @ rgbs
    mask = 1.0 - np.prod(keep, axis=0)
    return rgb, mask


def rasterize(gaussians: GaussianSet, pose: CameraPose,
              chunk: int = PIXEL_CHUNK) -> PseudoView:
    """Render the set from `pose`; primitives behind the camera are culled."""
    k = pose.intrinsics
    mean2d, cov2d, depth = _project(gaussians.means, gaussians.covariances(), pose)
    visible = depth > MIN_DEPTH
    # Far to near; equal depths break on the primitive's own attributes.
    means = gaussians.means[visible]
    keys = (*gaussians.rgbs[visible].T[::-1], gaussians.opacities[visible],
            *gaussians.quats[visible].T[::-1], *gaussians.scales[visible].T[::-1],
            *means.T[::-1], -depth[visible])
    order = np.lexsort(keys)
    mean2d = mean2d[visible][order]
    cov2d = cov2d[visible][order]
    opacities = gaussians.opacities[visible][order]
    rgbs = gaussians.rgbs[visible][order]

    py, px = np.mgrid[0:k.height, 0:k.width]
    pixels = np.stack([px.reshape(-1) + 0.5, py.reshape(-1) + 0.5], axis=1)
    rgb = np.zeros((pixels.shape[0], 3))
    mask = np.zeros(pixels.shape[0])
    if len(opacities):
        for start in range(0, pixels.shape[0], chunk):
            stop = start + chunk
            alpha = splat_alphas(mean2d, cov2d, opacities, pixels[start:stop])
            rgb[start:stop], mask[start:stop] = composite_back_to_front(alpha, rgbs)
    return PseudoView(pose=pose, rgb=rgb.reshape(k.height, k.width, 3),
                      mask=mask.reshape(k.height, k.width))


def prior_dome(pose_d: CameraPose, azimuths: Sequence[float], elevations: Sequence[float],
               intrinsics: Optional[Intrinsics] = None) -> List[DomeView]:
    """
    Dome around the prior-frame origin whose azimuth 0 lies on the horizontal
    bearing of the primary camera and whose radius is the primary camera's
    distance to the origin.
    """
    eye = pose_d.eye
    radius = float(np.linalg.norm(eye))
    bearing = eye - np.dot(eye, WORLD_UP) * WORLD_UP
    if np.linalg.norm(bearing) < 1e-9:
        bearing = DEFAULT_BEARING
    return dome_grid(np.zeros(3), radius, azimuths, elevations,
                     intrinsics if intrinsics is not None else pose_d.intrinsics,
                     bearing=bearing)


@dataclass
class PseudoGTView:
    """One supervised dome view: angles and world-frame pose plus the pseudo images."""
    view: DomeView
    rgb: np.ndarray
    mask: np.ndarray
    prior_pose: Optional[CameraPose] = None

    @property
    def elevation(self) -> float:
        return self.view.elevation

    @property
    def azimuth(self) -> float:
        return self.view.azimuth

    @property
    def pose(self) -> CameraPose:
        return self.view.pose


def generate_pseudo_gt(gaussians: GaussianSet, pose_n: CameraPose, pose_d: CameraPose,
                       dome: Sequence[DomeView]) -> List[Tuple[CameraPose, PseudoView]]:
    """
    Rasterize every dome pose in the prior frame, then carry the pose into
    the field frame with T = P_n * P_d^-1. Images are not touched by the mapping.
    """
    transform = alignment_transform(pose_n, pose_d)
    out = []
    for view in dome:
        pseudo = rasterize(gaussians, view.pose)
        out.append((apply_transform(transform, view.pose), pseudo))
    return out


def pseudo_gt_views(gaussians: GaussianSet, pose_n: CameraPose, pose_d: CameraPose,
                    dome: Sequence[DomeView]) -> List[PseudoGTView]:
    pairs = generate_pseudo_gt(gaussians, pose_n, pose_d, dome)
    return [PseudoGTView(DomeView(view.index, view.elevation, view.azimuth, world_pose),
                         pseudo.rgb, pseudo.mask, prior_pose=pseudo.pose)
            for view, (world_pose, pseudo) in zip(dome, pairs)]


def _frame_dir(root: str, t: int) -> str:
    return os.path.join(root, f"t{t:04d}")


def write_pseudo_gt_cache(root: str, frames: Dict[int, List[PseudoGTView]]) -> str:
    """
    Write `t{TTTT}/v{VV}_rgb.png`, `t{TTTT}/v{VV}_mask.png` under `root`
    plus a `manifest.json` mapping view indices to world poses.

    Returns:
        The manifest path.
    """
    os.makedirs(root, exist_ok=True)
    manifest = {"schema": CACHE_SCHEMA, "frames": {}}
    for t in tqdm(sorted(frames), desc="pseudo-GT cache", unit="frame"):
        entries = []
        for entry in frames[t]:
            stem = f"v{entry.view.index:02d}"
            rgb_path = os.path.join(f"t{t:04d}", f"{stem}_rgb.png")
            mask_path = os.path.join(f"t{t:04d}", f"{stem}_mask.png")
            imaging.write_png(os.path.join(root, rgb_path), entry.rgb)
            imaging.write_png(os.path.join(root, mask_path), entry.mask)
            record = {"index": entry.view.index, "elevation": entry.view.elevation,
                      "azimuth": entry.view.azimuth, "pose": entry.view.pose.to_list(),
                      "rgb": rgb_path, "mask": mask_path}
            if entry.prior_pose is not None:
                record["prior_pose"] = entry.prior_pose.to_list()
            entries.append(record)
        manifest["frames"][str(t)] = entries
    path = os.path.join(root, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2)
    return path


def load_pseudo_gt_cache(root: str) -> Dict[int, List[PseudoGTView]]:
    path = os.path.join(root, "manifest.json")
    with open(path, "r") as f:
        manifest = json.load(f)
    if manifest.get("schema") != CACHE_SCHEMA:
        raise ValueError(f"unsupported pseudo-GT manifest schema {manifest.get('schema')!r}")
    frames: Dict[int, List[PseudoGTView]] = {}
    for key, entries in manifest["frames"].items():
        views = []
        for record in entries:
            view = DomeView(int(record["index"]), float(record["elevation"]),
                            float(record["azimuth"]), CameraPose.from_list(record["pose"]))
            prior = record.get("prior_pose")
            views.append(PseudoGTView(
                view,
                imaging.read_rgb(os.path.join(root, record["rgb"])),
                imaging.read_gray(os.path.join(root, record["mask"])),
                prior_pose=CameraPose.from_list(prior) if prior is not None else None))
        frames[int(key)] = views
    logger.info("loaded pseudo-GT for %d frames from %s", len(frames), root)
    return frames
