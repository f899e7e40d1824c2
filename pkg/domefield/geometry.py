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
Camera poses, rays, dome viewpoint sampling and the rigid alignment between
the prior coordinate frame and the field coordinate frame.

Conventions: poses are world-from-camera transforms acting on column
vectors. A camera looks down its local -Z axis with +Y up and +X right, so
the rotation's columns are the camera's right, up and backward axes
expressed in world coordinates. Pixel (px, py) is back-projected through
its center (px + 0.5, py + 0.5); image rows grow downwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple
import logging
import math

import numpy as np

from domefield.errors import DegenerateLookAt, EmptyDome, RayMissesBounds

logger = logging.getLogger(__name__)

WORLD_UP = np.array([0.0, 1.0, 0.0])
DEFAULT_BEARING = np.array([0.0, 0.0, 1.0])

_ORTHO_TOL = 1e-9


def _frozen_array(values, shape) -> np.ndarray:
    array = np.array(values, dtype=np.float64).reshape(shape)
    array.setflags(write=False)
    return array


def _normalize(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _check_rotation(rotation: np.ndarray, what: str) -> None:
    if not np.allclose(rotation.T @ rotation, np.eye(3), atol=_ORTHO_TOL, rtol=0.0):
        raise ValueError(f"{what} is not orthonormal")
    if abs(np.linalg.det(rotation) - 1.0) > _ORTHO_TOL:
        raise ValueError(f"{what} must have determinant +1")


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels."""
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside a "
                f"{self.width}x{self.height} raster")

    @classmethod
    def from_fov(cls, width: int, height: int, fov_x_degrees: float) -> Intrinsics:
        """Square-pixel intrinsics with the principal point at the raster center."""
        fx = 0.5 * width / math.tan(math.radians(fov_x_degrees) / 2.0)
        return cls(fx=fx, fy=fx, cx=width / 2.0, cy=height / 2.0,
                   width=int(width), height=int(height))

    def scaled(self, factor: float) -> Intrinsics:
        """Intrinsics of the same camera at a raster scaled by `factor`."""
        return Intrinsics(fx=self.fx * factor, fy=self.fy * factor,
                          cx=self.cx * factor, cy=self.cy * factor,
                          width=int(round(self.width * factor)),
                          height=int(round(self.height * factor)))

    def to_list(self) -> List[float]:
        return [self.fx, self.fy, self.cx, self.cy, float(self.width), float(self.height)]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> Intrinsics:
        fx, fy, cx, cy, width, height = values
        return cls(fx=fx, fy=fy, cx=cx, cy=cy, width=int(width), height=int(height))


@dataclass(frozen=True, eq=False)
class CameraPose:
    """
    A world-from-camera rigid transform plus pinhole intrinsics.

    Attributes:
        rotation: 3x3 orthonormal matrix, columns are camera axes in world.
        translation: camera eye position in world units.
        intrinsics: pinhole intrinsics.
    """
    rotation: np.ndarray
    translation: np.ndarray
    intrinsics: Intrinsics

    def __post_init__(self):
        rotation = _frozen_array(self.rotation, (3, 3))
        translation = _frozen_array(self.translation, (3,))
        _check_rotation(rotation, "camera rotation")
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CameraPose):
            return NotImplemented
        return (np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation)
                and self.intrinsics == other.intrinsics)

    def __repr__(self) -> str:
        eye = ", ".join(f"{v:.4f}" for v in self.translation)
        return f"CameraPose(eye=({eye}), {self.intrinsics.width}x{self.intrinsics.height})"

    @property
    def eye(self) -> np.ndarray:
        return self.translation

    @property
    def forward(self) -> np.ndarray:
        return -self.rotation[:, 2]

    @property
    def up(self) -> np.ndarray:
        return self.rotation[:, 1]

    @property
    def right(self) -> np.ndarray:
        return self.rotation[:, 0]

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, intrinsics: Intrinsics) -> CameraPose:
        matrix = np.asarray(matrix, dtype=np.float64)
        return cls(rotation=matrix[:3, :3], translation=matrix[:3, 3], intrinsics=intrinsics)

    def with_intrinsics(self, intrinsics: Intrinsics) -> CameraPose:
        return CameraPose(self.rotation, self.translation, intrinsics)

    def to_list(self) -> List[float]:
        """Row-major 3x4 [R | t] followed by the six intrinsics values."""
        top = np.hstack([self.rotation, self.translation[:, None]])
        return [float(v) for v in top.reshape(-1)] + self.intrinsics.to_list()

    @classmethod
    def from_list(cls, values: Sequence[float]) -> CameraPose:
        if len(values) != 18:
            raise ValueError(f"a serialized pose has 18 numbers, got {len(values)}")
        top = np.asarray(values[:12], dtype=np.float64).reshape(3, 4)
        return cls(rotation=top[:, :3], translation=top[:, 3],
                   intrinsics=Intrinsics.from_list(values[12:]))


@dataclass(frozen=True)
class SphericalViewpoint:
    """A point on a dome: angles in degrees, radius in scene units."""
    elevation: float
    azimuth: float
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"dome radius must be positive, got {self.radius}")
        if not -90.0 <= self.elevation <= 90.0:
            raise ValueError(f"elevation {self.elevation} outside [-90, 90]")
        if not -180.0 <= self.azimuth <= 180.0:
            raise ValueError(f"azimuth {self.azimuth} outside [-180, 180]")

    def eye(self, center: np.ndarray, bearing: np.ndarray = DEFAULT_BEARING,
            up: np.ndarray = WORLD_UP) -> np.ndarray:
        """Eye position; azimuth 0 lies on `bearing`, +azimuth turns towards up x bearing."""
        up = _normalize(np.asarray(up, dtype=np.float64))
        bearing = np.asarray(bearing, dtype=np.float64)
        bearing = _normalize(bearing - np.dot(bearing, up) * up)
        side = np.cross(up, bearing)
        elevation = math.radians(self.elevation)
        azimuth = math.radians(self.azimuth)
        horizontal = math.cos(azimuth) * bearing + math.sin(azimuth) * side
        direction = math.cos(elevation) * horizontal + math.sin(elevation) * up
        return np.asarray(center, dtype=np.float64) + self.radius * direction


@dataclass(frozen=True, eq=False)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float
    frame_time: int

    def __post_init__(self):
        direction = _frozen_array(self.direction, (3,))
        if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        if not 0.0 <= self.t_near < self.t_far:
            raise ValueError(f"invalid ray interval [{self.t_near}, {self.t_far}]")
        object.__setattr__(self, "origin", _frozen_array(self.origin, (3,)))
        object.__setattr__(self, "direction", direction)

    def at(self, t) -> np.ndarray:
        return self.origin + np.multiply.outer(t, self.direction)


@dataclass
class RayBatch:
    """
    Many rays of one frame. Rays that miss the scene box carry hit=False and
    an empty interval; renderers treat them as empty space.
    """
    origins: np.ndarray
    directions: np.ndarray
    t_near: np.ndarray
    t_far: np.ndarray
    hit: np.ndarray
    frame_time: int

    def __len__(self) -> int:
        return self.origins.shape[0]

    def subset(self, selection) -> RayBatch:
        return RayBatch(self.origins[selection], self.directions[selection],
                        self.t_near[selection], self.t_far[selection],
                        self.hit[selection], self.frame_time)

    @classmethod
    def from_rays(cls, rays: Sequence[Ray]) -> RayBatch:
        if not rays:
            raise ValueError("at least one ray is required")
        frame_times = {ray.frame_time for ray in rays}
        if len(frame_times) != 1:
            raise ValueError("a ray batch must share one frame time")
        return cls(origins=np.stack([r.origin for r in rays]),
                   directions=np.stack([r.direction for r in rays]),
                   t_near=np.array([r.t_near for r in rays]),
                   t_far=np.array([r.t_far for r in rays]),
                   hit=np.ones(len(rays), dtype=bool),
                   frame_time=frame_times.pop())


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """A 4x4 homogeneous rigid transform acting on column vectors."""
    matrix: np.ndarray

    def __post_init__(self):
        matrix = _frozen_array(self.matrix, (4, 4))
        if not np.allclose(matrix[3], [0.0, 0.0, 0.0, 1.0], atol=0.0, rtol=0.0):
            raise ValueError("bottom row of a rigid transform must be (0, 0, 0, 1)")
        _check_rotation(matrix[:3, :3], "rigid transform rotation")
        object.__setattr__(self, "matrix", matrix)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(4))

    @classmethod
    def from_rotation_translation(cls, rotation, translation) -> RigidTransform:
        m = np.eye(4)
        m[:3, :3] = rotation
        m[:3, 3] = translation
        return cls(m)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def inverse(self) -> RigidTransform:
        return RigidTransform(rigid_inverse(self.matrix))

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return RigidTransform(self.matrix @ other.matrix)

    def apply_points(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation


@dataclass(frozen=True)
class DomeView:
    """One dome camera together with the angles it was built from."""
    index: int
    elevation: float
    azimuth: float
    pose: CameraPose

    @property
    def key(self) -> str:
        return view_key(self.elevation, self.azimuth)


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned box in scene units."""
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = _frozen_array(self.lo, (3,))
        hi = _frozen_array(self.hi, (3,))
        if not np.all(hi > lo):
            raise ValueError(f"degenerate box lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Box):
            return NotImplemented
        return np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi)

    def __repr__(self) -> str:
        return f"Box(lo={self.lo.tolist()}, hi={self.hi.tolist()})"

    @classmethod
    def cube(cls, center, half_extent: float) -> Box:
        center = np.asarray(center, dtype=np.float64)
        return cls(center - half_extent, center + half_extent)

    @property
    def size(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points)
        return np.all((points >= self.lo) & (points <= self.hi), axis=-1)

    def to_list(self) -> List[float]:
        return self.lo.tolist() + self.hi.tolist()

    @classmethod
    def from_list(cls, values: Sequence[float]) -> Box:
        return cls(values[:3], values[3:])


def view_key(elevation: float, azimuth: float) -> str:
    """Directory-style key of a dome view, e.g. `e15_a-05`."""
    return f"e{int(round(elevation)):02d}_a{int(round(azimuth)):+03d}"


def rigid_inverse(matrix: np.ndarray) -> np.ndarray:
    rotation = matrix[:3, :3]
    inv = np.eye(4)
    inv[:3, :3] = rotation.T
    inv[:3, 3] = -rotation.T @ matrix[:3, 3]
    return inv


def look_at_pose(eye, target, up, intrinsics: Intrinsics) -> CameraPose:
    """
    Build a camera at `eye` whose forward axis points at `target`.

    Raises:
        DegenerateLookAt: if eye coincides with target or `up` is parallel
            to the viewing direction.
    """
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)

    offset = target - eye
    distance = np.linalg.norm(offset)
    if distance <= 1e-9:
        raise DegenerateLookAt(f"eye {eye.tolist()} coincides with target")
    forward = offset / distance

    right = np.cross(forward, up)
    right_norm = np.linalg.norm(right)
    if right_norm < 1e-9:
        raise DegenerateLookAt(
            f"up vector {up.tolist()} is parallel to the viewing direction {forward.tolist()}")
    right = right / right_norm
    camera_up = np.cross(right, forward)

    rotation = np.column_stack([right, camera_up, -forward])
    return CameraPose(rotation=rotation, translation=eye, intrinsics=intrinsics)


def dome_grid(center, radius: float, azimuths: Sequence[float], elevations: Sequence[float],
              intrinsics: Intrinsics, bearing=DEFAULT_BEARING, up=WORLD_UP) -> List[DomeView]:
    """Dome cameras ordered elevation-major, then azimuth ascending."""
    if not radius > 0:
        raise ValueError(f"dome radius must be positive, got {radius}")
    if len(azimuths) == 0 or len(elevations) == 0:
        raise ValueError("azimuth and elevation lists must be non-empty")

    center = np.asarray(center, dtype=np.float64)
    views: List[DomeView] = []
    for elevation in sorted(elevations):
        for azimuth in sorted(azimuths):
            eye = SphericalViewpoint(elevation, azimuth, radius).eye(center, bearing, up)
            pose = look_at_pose(eye, center, up, intrinsics)
            views.append(DomeView(len(views), float(elevation), float(azimuth), pose))
    return views


def dome_viewpoints(center, radius: float, azimuths: Sequence[float],
                    elevations: Sequence[float], intrinsics: Intrinsics,
                    bearing=DEFAULT_BEARING, up=WORLD_UP) -> List[CameraPose]:
    return [view.pose for view in
            dome_grid(center, radius, azimuths, elevations, intrinsics, bearing, up)]


def alignment_transform(pose_n: CameraPose, pose_d: CameraPose) -> RigidTransform:
    """T = P_n * P_d^-1, so that T * P_d == P_n."""
    return RigidTransform(pose_n.matrix @ rigid_inverse(pose_d.matrix))


def apply_transform(transform: RigidTransform, pose: CameraPose) -> CameraPose:
    return CameraPose.from_matrix(transform.matrix @ pose.matrix, pose.intrinsics)


def ray_box_intersection(origins: np.ndarray, directions: np.ndarray,
                         box: Box) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Slab test for many rays.

    Returns:
        (t_near, t_far, hit) with t_near clipped at 0 for rays that start
        inside the box.
    """
    origins = np.asarray(origins, dtype=np.float64)
    directions = np.asarray(directions, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / directions
        t0 = (box.lo - origins) * inv
        t1 = (box.hi - origins) * inv
    t_lo = np.minimum(t0, t1)
    t_hi = np.maximum(t0, t1)
    # Axis-parallel rays produce nan slabs; those axes do not constrain.
    t_lo = np.where(np.isnan(t_lo), -np.inf, t_lo)
    t_hi = np.where(np.isnan(t_hi), np.inf, t_hi)
    t_near = np.maximum(t_lo.max(axis=-1), 0.0)
    t_far = t_hi.min(axis=-1)
    hit = t_far > t_near
    return t_near, t_far, hit


def pixel_directions(pose: CameraPose, px, py) -> np.ndarray:
    """Unit world-space directions through pixel centers."""
    k = pose.intrinsics
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    x = (px + 0.5 - k.cx) / k.fx
    y = -(py + 0.5 - k.cy) / k.fy
    local = np.stack([x, y, -np.ones_like(x)], axis=-1)
    local /= np.linalg.norm(local, axis=-1, keepdims=True)
    return local @ pose.rotation.T


def generate_rays(pose: CameraPose, px, py, frame_time: int, bounds: Box) -> RayBatch:
    """Rays through many pixels, clipped to `bounds`; misses are flagged, not raised."""
    directions = pixel_directions(pose, px, py).reshape(-1, 3)
    origins = np.broadcast_to(pose.eye, directions.shape).copy()
    t_near, t_far, hit = ray_box_intersection(origins, directions, bounds)
    t_near = np.where(hit, t_near, 0.0)
    t_far = np.where(hit, t_far, 0.0)
    return RayBatch(origins, directions, t_near, t_far, hit, int(frame_time))


def image_rays(pose: CameraPose, frame_time: int, bounds: Box) -> RayBatch:
    """One ray per pixel in row-major order."""
    k = pose.intrinsics
    py, px = np.mgrid[0:k.height, 0:k.width]
    return generate_rays(pose, px.reshape(-1), py.reshape(-1), frame_time, bounds)


def generate_ray(pose: CameraPose, px: float, py: float, frame_time: int, bounds: Box) -> Ray:
    """
    Back-project a single pixel center.

    Raises:
        ValueError: if the pixel lies outside the raster.
        RayMissesBounds: if the ray does not intersect `bounds`.
    """
    k = pose.intrinsics
    if not (0 <= px < k.width and 0 <= py < k.height):
        raise ValueError(f"pixel ({px}, {py}) outside a {k.width}x{k.height} raster")
    batch = generate_rays(pose, [px], [py], frame_time, bounds)
    if not batch.hit[0]:
        raise RayMissesBounds(f"ray through pixel ({px}, {py}) misses {bounds}")
    return Ray(origin=batch.origins[0], direction=batch.directions[0],
               t_near=float(batch.t_near[0]), t_far=float(batch.t_far[0]),
               frame_time=int(frame_time))


def _eligible_pairs(views: Sequence[DomeView]) -> Dict[float, List[Tuple[int, int]]]:
    by_elevation: Dict[float, Dict[float, int]] = {}
    for position, view in enumerate(views):
        by_elevation.setdefault(view.elevation, {})[view.azimuth] = position

    pairs: Dict[float, List[Tuple[int, int]]] = {}
    for elevation in sorted(by_elevation):
        azimuths = by_elevation[elevation]
        eligible = [(azimuths[a], azimuths[-a]) for a in sorted(azimuths)
                    if a > 0 and -a in azimuths]
        if eligible:
            pairs[elevation] = eligible
    return pairs


def symmetric_pair_indices(rng: np.random.Generator,
                           views: Sequence[DomeView]) -> Tuple[int, int]:
    """
    Positions in `views` of a (+a, -a) pair: elevation drawn uniformly among
    elevations that hold a pair, then |a| drawn uniformly among that
    elevation's nonzero mirrored azimuths.

    Raises:
        EmptyDome: if no elevation holds a mirrored pair.
    """
    pairs = _eligible_pairs(views)
    if not pairs:
        raise EmptyDome("dome holds no mirrored (+a, -a) azimuth pair")
    elevations = list(pairs)
    choices = pairs[elevations[int(rng.integers(len(elevations)))]]
    return choices[int(rng.integers(len(choices)))]


def symmetric_pair(rng: np.random.Generator,
                   views: Sequence[DomeView]) -> Tuple[CameraPose, CameraPose]:
    plus, minus = symmetric_pair_indices(rng, views)
    return views[plus].pose, views[minus].pose
