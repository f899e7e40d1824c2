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
Synthetic dynamic scenes with exact ground truth: a checkerboard room, one
moving textured object, a monocular primary camera path and a camera dome
around the object. Rendering is unlit albedo with exact nearest-hit masks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple
import json
import logging
import math
import os

import numpy as np
from scipy.spatial.transform import Rotation
from tqdm import tqdm

from domefield import imaging
from domefield.errors import UnknownScene
from domefield.field import check_frame
from domefield.geometry import (
    WORLD_UP, Box, CameraPose, DomeView, Intrinsics, RigidTransform,
    apply_transform, dome_grid, look_at_pose, pixel_directions, ray_box_intersection,
    SphericalViewpoint,
)

logger = logging.getLogger(__name__)

SCENES = ("bouncer", "spinner")
MANIFEST_SCHEMA = 1

ROOM = Box([-3.0, -1.5, -3.0], [3.0, 2.5, 3.0])
CHECKER_CELL = 0.5
IMAGE_SIZE = 64
FOV_X_DEGREES = 90.0

DOME_AZIMUTHS = tuple(float(a) for a in range(-45, 50, 5))
DOME_ELEVATIONS = (0.0, 15.0, 30.0)
EVAL_ELEVATION = 0.0
EVAL_AZIMUTHS = tuple(float(a) for a in (-30, -25, -20, -15, -10, -5, 5, 10, 15, 20, 25, 30))

# Two checker colors per face, in +x, -x, +y, -y, +z, -z order.
_FACE_COLORS = np.array([
    [[0.80, 0.30, 0.30], [0.95, 0.75, 0.70]],
    [[0.30, 0.70, 0.35], [0.75, 0.95, 0.75]],
    [[0.85, 0.85, 0.80], [0.55, 0.55, 0.50]],
    [[0.35, 0.30, 0.25], [0.70, 0.60, 0.45]],
    [[0.30, 0.40, 0.80], [0.70, 0.80, 0.95]],
    [[0.75, 0.65, 0.20], [0.95, 0.90, 0.55]],
])


@dataclass(frozen=True, eq=False)
class Room:
    """Axis-aligned room seen from inside, each face a two-color checkerboard."""
    box: Box
    face_colors: np.ndarray
    cell: float = CHECKER_CELL

    def exit_distance(self, origins: np.ndarray, directions: np.ndarray) -> np.ndarray:
        _, t_far, _ = ray_box_intersection(origins, directions, self.box)
        return t_far

    def albedo(self, points: np.ndarray) -> np.ndarray:
        lo, hi = self.box.lo, self.box.hi
        distance = np.stack([hi - points, points - lo], axis=-1)  # (P, 3, 2)
        flat = distance.reshape(len(points), 6)
        face = np.argmin(flat, axis=1)  # axis * 2 + (0 for +side, 1 for -side)
        axis = face // 2
        u_axis = (axis + 1) % 3
        v_axis = (axis + 2) % 3
        rows = np.arange(len(points))
        u = np.floor((points[rows, u_axis] - lo[u_axis]) / self.cell)
        v = np.floor((points[rows, v_axis] - lo[v_axis]) / self.cell)
        parity = ((u + v) % 2).astype(np.int64)
        return self.face_colors[face, parity]


class SphereObject:
    """Sphere at the local origin with a latitude/longitude checker of two colors."""

    colors = np.array([[0.95, 0.55, 0.10], [0.10, 0.55, 0.75]])

    def __init__(self, radius: float = 0.5):
        self.radius = float(radius)

    @property
    def surface_area(self) -> float:
        return 4.0 * math.pi * self.radius ** 2

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    @property
    def bounding_radius(self) -> float:
        return self.radius

    def sample_surface(self, rng: np.random.Generator, n: int) -> np.ndarray:
        directions = rng.standard_normal((n, 3))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        return self.radius * directions

    def albedo(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        unit = points / np.linalg.norm(points, axis=-1, keepdims=True)
        latitude = np.arcsin(np.clip(unit[..., 1], -1.0, 1.0))
        longitude = np.arctan2(unit[..., 0], unit[..., 2])
        band = np.floor(latitude / (math.pi / 6.0)) + np.floor(longitude / (math.pi / 4.0))
        return self.colors[(band % 2).astype(np.int64)]

    def intersect(self, origins: np.ndarray, directions: np.ndarray) -> np.ndarray:
        """Distance to the first hit in front of the origin, inf on a miss."""
        b = np.einsum("ij,ij->i", origins, directions)
        c = np.einsum("ij,ij->i", origins, origins) - self.radius ** 2
        disc = b * b - c
        root = np.sqrt(np.maximum(disc, 0.0))
        near = -b - root
        far = -b + root
        t = np.where(near > 0, near, far)
        return np.where((disc > 0) & (t > 0), t, np.inf)


class BoxObject:
    """Axis-aligned box at the local origin, one color per face."""

    colors = np.array([
        [0.90, 0.20, 0.20], [0.20, 0.80, 0.30], [0.95, 0.90, 0.20],
        [0.20, 0.30, 0.90], [0.85, 0.30, 0.85], [0.20, 0.85, 0.90],
    ])

    def __init__(self, half_extents: Sequence[float] = (0.35, 0.35, 0.35)):
        self.half = np.asarray(half_extents, dtype=np.float64)
        self.box = Box(-self.half, self.half)

    @property
    def surface_area(self) -> float:
        a, b, c = 2.0 * self.half
        return 2.0 * (a * b + b * c + c * a)

    @property
    def diameter(self) -> float:
        return 2.0 * float(np.linalg.norm(self.half))

    @property
    def bounding_radius(self) -> float:
        return float(np.linalg.norm(self.half))

    def sample_surface(self, rng: np.random.Generator, n: int) -> np.ndarray:
        a, b, c = 2.0 * self.half
        areas = np.array([b * c, b * c, a * c, a * c, a * b, a * b])
        faces = rng.choice(6, size=n, p=areas / areas.sum())
        points = rng.uniform(-self.half, self.half, size=(n, 3))
        axis = faces // 2
        sign = np.where(faces % 2 == 0, 1.0, -1.0)
        points[np.arange(n), axis] = sign * self.half[axis]
        return points

    def albedo(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        ratio = np.abs(points) / self.half
        axis = np.argmax(ratio, axis=-1)
        component = np.take_along_axis(points, axis[..., None], axis=-1)[..., 0]
        face = axis * 2 + (component < 0)
        return self.colors[face]

    def intersect(self, origins: np.ndarray, directions: np.ndarray) -> np.ndarray:
        t_near, t_far, hit = ray_box_intersection(origins, directions, self.box)
        return np.where(hit & (t_near > 0), t_near, np.inf)


@dataclass(frozen=True, eq=False)
class SceneDef:
    """
    A dynamic synthetic scene. Frame t (1-based) places the object with the
    rigid transform `object_transform(t)` (local to world) and views it
    from `primary_pose(t)`.
    """
    name: str
    n_frames: int
    seed: int
    room: Room
    obj: object
    centers: np.ndarray
    rotations: np.ndarray
    primary_poses: Tuple[CameraPose, ...]
    intrinsics: Intrinsics
    azimuths: Tuple[float, ...] = DOME_AZIMUTHS
    elevations: Tuple[float, ...] = DOME_ELEVATIONS

    def _check_frame(self, t: int) -> None:
        check_frame(t, self.n_frames)

    def object_transform(self, t: int) -> RigidTransform:
        self._check_frame(t)
        return RigidTransform.from_rotation_translation(self.rotations[t - 1], self.centers[t - 1])

    def primary_pose(self, t: int) -> CameraPose:
        self._check_frame(t)
        return self.primary_poses[t - 1]

    @property
    def bg_bounds(self) -> Box:
        return self.room.box

    @property
    def fg_bounds(self) -> Box:
        """Cube around the origin enclosing the object over the whole trajectory."""
        half = float(np.max(np.abs(self.centers))) + self.obj.bounding_radius + 0.1
        return Box.cube(np.zeros(3), half)

    def dome_radius(self, t: int) -> float:
        return float(np.linalg.norm(self.primary_pose(t).eye - self.centers[t - 1]))

    def dome(self, t: int, azimuths: Optional[Sequence[float]] = None,
             elevations: Optional[Sequence[float]] = None) -> List[DomeView]:
        """
        World-frame dome of frame t: centered on the object, radius equal to
        the primary camera's distance to it, azimuth 0 on the primary bearing.
        """
        center = self.centers[t - 1]
        bearing = self.primary_pose(t).eye - center
        bearing = bearing - np.dot(bearing, WORLD_UP) * WORLD_UP
        return dome_grid(center, self.dome_radius(t),
                         self.azimuths if azimuths is None else azimuths,
                         self.elevations if elevations is None else elevations,
                         self.intrinsics, bearing=bearing)

    def eval_views(self, t: int) -> List[DomeView]:
        return self.dome(t, EVAL_AZIMUTHS, (EVAL_ELEVATION,))


def _face_colors(seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    jitter = rng.uniform(-0.05, 0.05, size=_FACE_COLORS.shape)
    return np.clip(_FACE_COLORS + jitter, 0.0, 1.0)


def gen_scene(name: str, n_frames: int = 24, seed: int = 0,
              image_size: int = IMAGE_SIZE) -> SceneDef:
    """
    Build a named scene.

    bouncer: striped sphere on a closed sinusoidal path, camera orbiting it
    through a 20 degree azimuth sweep. spinner: multicolor box turning
    360/N degrees per frame about +Y, camera dollying in along +Z.

    Raises:
        UnknownScene: for any other name.
    """
    if name not in SCENES:
        raise UnknownScene(f"unknown scene {name!r}; expected one of {', '.join(SCENES)}")
    if n_frames < 3:
        raise ValueError(f"a scene needs at least 3 frames, got {n_frames}")
    intrinsics = Intrinsics.from_fov(image_size, image_size, FOV_X_DEGREES)
    room = Room(ROOM, _face_colors(seed))
    frames = np.arange(n_frames)
    progress = frames / (n_frames - 1)

    if name == "bouncer":
        obj = SphereObject(0.5)
        phase = 2.0 * math.pi * frames / n_frames
        centers = np.stack([0.25 * np.cos(phase), 0.3 * np.sin(phase), np.zeros(n_frames)], axis=1)
        rotations = np.repeat(np.eye(3)[None], n_frames, axis=0)
        poses = []
        for t in range(n_frames):
            azimuth = -10.0 + 20.0 * progress[t]
            eye = SphericalViewpoint(0.0, azimuth, 2.5).eye(centers[t])
            poses.append(look_at_pose(eye, centers[t], WORLD_UP, intrinsics))
    else:
        obj = BoxObject()
        centers = np.zeros((n_frames, 3))
        angles = 360.0 * frames / n_frames
        rotations = Rotation.from_euler("y", angles, degrees=True).as_matrix()
        poses = [look_at_pose([0.0, 0.0, 2.8 - 0.8 * progress[t]], np.zeros(3), WORLD_UP, intrinsics)
                 for t in range(n_frames)]

    scene = SceneDef(name=name, n_frames=n_frames, seed=seed, room=room, obj=obj,
                     centers=centers, rotations=rotations, primary_poses=tuple(poses),
                     intrinsics=intrinsics)
    _check_scene(scene)
    return scene


def _check_scene(scene: SceneDef) -> None:
    radius = scene.obj.bounding_radius
    k = scene.intrinsics
    for t in range(1, scene.n_frames + 1):
        center = scene.centers[t - 1]
        if np.any(center - radius <= scene.room.box.lo) or np.any(center + radius >= scene.room.box.hi):
            raise ValueError(f"object leaves the room at frame {t}")
        pose = scene.primary_pose(t)
        local = (center - pose.eye) @ pose.rotation
        depth = -local[2]
        u = k.cx + k.fx * local[0] / depth
        v = k.cy - k.fy * local[1] / depth
        if not (depth > 0 and 0 <= u < k.width and 0 <= v < k.height):
            raise ValueError(f"object leaves the primary view at frame {t}")


def analytic_render(scene: SceneDef, pose: CameraPose, t: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Exact unlit render of frame t.

    Returns:
        (rgb (H, W, 3), mask (H, W)) with mask 1 exactly where the object is
        the nearest hit.
    """
    k = pose.intrinsics
    py, px = np.mgrid[0:k.height, 0:k.width]
    directions = pixel_directions(pose, px.reshape(-1), py.reshape(-1))
    origins = np.broadcast_to(pose.eye, directions.shape)

    transform = scene.object_transform(t)
    rotation = transform.rotation
    local_origins = (origins - transform.translation) @ rotation
    local_directions = directions @ rotation
    t_object = scene.obj.intersect(local_origins, local_directions)
    t_room = scene.room.exit_distance(origins, directions)

    on_object = t_object < t_room
    rgb = scene.room.albedo(origins + t_room[:, None] * directions)
    if np.any(on_object):
        hits = local_origins[on_object] + t_object[on_object, None] * local_directions[on_object]
        rgb[on_object] = scene.obj.albedo(hits)
    return rgb.reshape(k.height, k.width, 3), on_object.reshape(k.height, k.width).astype(np.float64)


def prior_frame_pose(scene: SceneDef, t: int, pose: CameraPose) -> CameraPose:
    """Express a world pose in the object-local frame of frame t."""
    return apply_transform(scene.object_transform(t).inverse(), pose)


@dataclass
class DatasetManifest:
    """
    Everything a trainer or evaluator needs to find a written dataset. Poses
    are stored as serialized 18-number lists and paths relative to the root.
    """
    scene: str
    seed: int
    n_frames: int
    width: int
    height: int
    intrinsics: List[float]
    bg_bounds: List[float]
    fg_bounds: List[float]
    frames: List[Dict] = field(default_factory=list)
    dome: Dict[str, Dict] = field(default_factory=dict)
    eval_views: List[str] = field(default_factory=list)
    schema: int = MANIFEST_SCHEMA

    def to_dict(self) -> Dict:
        return {"schema": self.schema, "scene": self.scene, "seed": self.seed,
                "n_frames": self.n_frames, "width": self.width, "height": self.height,
                "intrinsics": self.intrinsics, "bg_bounds": self.bg_bounds,
                "fg_bounds": self.fg_bounds, "frames": self.frames, "dome": self.dome,
                "eval_views": self.eval_views}

    @classmethod
    def from_dict(cls, data: Dict) -> DatasetManifest:
        if data.get("schema") != MANIFEST_SCHEMA:
            raise ValueError(f"unsupported dataset manifest schema {data.get('schema')!r}")
        return cls(scene=data["scene"], seed=int(data["seed"]), n_frames=int(data["n_frames"]),
                   width=int(data["width"]), height=int(data["height"]),
                   intrinsics=list(data["intrinsics"]), bg_bounds=list(data["bg_bounds"]),
                   fg_bounds=list(data["fg_bounds"]), frames=list(data["frames"]),
                   dome=dict(data["dome"]), eval_views=list(data["eval_views"]),
                   schema=int(data["schema"]))

    def write(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def read(cls, path: str) -> DatasetManifest:
        with open(path, "r") as f:
            return cls.from_dict(json.load(f))

    def primary_pose(self, t: int) -> CameraPose:
        return CameraPose.from_list(self.frames[t - 1]["pose"])

    def dome_pose(self, key: str, t: int) -> CameraPose:
        return CameraPose.from_list(self.dome[key]["poses"][t - 1])

    def paths(self) -> List[str]:
        out = []
        for frame in self.frames:
            out.extend([frame["image"], frame["mask"]])
        for view in self.dome.values():
            out.extend(view["images"])
            out.extend(view["masks"])
        return out


def write_dataset(scene: SceneDef, out_dir: str, all_views: bool = True) -> DatasetManifest:
    """
    Render primary frames, exact masks and dome ground truth to `out_dir`
    and write `manifest.json`. With all_views=False only the held-out
    evaluation views of the dome are written.
    """
    os.makedirs(out_dir, exist_ok=True)
    manifest = DatasetManifest(
        scene=scene.name, seed=scene.seed, n_frames=scene.n_frames,
        width=scene.intrinsics.width, height=scene.intrinsics.height,
        intrinsics=scene.intrinsics.to_list(),
        bg_bounds=scene.bg_bounds.to_list(), fg_bounds=scene.fg_bounds.to_list())

    for t in tqdm(range(1, scene.n_frames + 1), desc=f"writing {scene.name}", unit="frame"):
        pose = scene.primary_pose(t)
        rgb, mask = analytic_render(scene, pose, t)
        image_path = os.path.join("frames", f"{t:04d}.png")
        mask_path = os.path.join("masks", f"{t:04d}.png")
        imaging.write_png(os.path.join(out_dir, image_path), rgb)
        imaging.write_png(os.path.join(out_dir, mask_path), mask)
        manifest.frames.append({
            "t": t, "pose": pose.to_list(), "image": image_path, "mask": mask_path,
            "object_center": scene.centers[t - 1].tolist(),
            "object_rotation": scene.rotations[t - 1].reshape(-1).tolist()})

        views = scene.dome(t) if all_views else scene.eval_views(t)
        for view in views:
            entry = manifest.dome.setdefault(view.key, {
                "elevation": view.elevation, "azimuth": view.azimuth,
                "poses": [], "images": [], "masks": []})
            rgb, mask = analytic_render(scene, view.pose, t)
            image_path = os.path.join("dome", view.key, f"{t:04d}.png")
            mask_path = os.path.join("dome_masks", view.key, f"{t:04d}.png")
            imaging.write_png(os.path.join(out_dir, image_path), rgb)
            imaging.write_png(os.path.join(out_dir, mask_path), mask)
            entry["poses"].append(view.pose.to_list())
            entry["images"].append(image_path)
            entry["masks"].append(mask_path)

    manifest.eval_views = [view.key for view in scene.eval_views(1)]
    manifest.write(os.path.join(out_dir, "manifest.json"))
    logger.info("wrote %d primary frames and %d dome views to %s",
                scene.n_frames, len(manifest.dome), out_dir)
    return manifest


def read_dataset(root: str) -> DatasetManifest:
    return DatasetManifest.read(os.path.join(root, "manifest.json"))


def scene_from_manifest(manifest: DatasetManifest) -> SceneDef:
    """Rebuild the analytic scene a manifest was written from."""
    return gen_scene(manifest.scene, manifest.n_frames, manifest.seed, manifest.width)
