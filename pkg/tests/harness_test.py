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
This module tests the synthetic scenes and dataset writer in `domefield/harness.py`
"""

from __future__ import annotations
import math
import os
import tempfile
import unittest

import numpy as np
from scipy.spatial.transform import Rotation

from domefield.errors import UnknownScene
from domefield.geometry import (
    WORLD_UP, alignment_transform, apply_transform, look_at_pose, pixel_directions,
)
from domefield.harness import (
    DOME_AZIMUTHS, DOME_ELEVATIONS, EVAL_AZIMUTHS, DatasetManifest, analytic_render,
    gen_scene, prior_frame_pose, read_dataset, scene_from_manifest, write_dataset,
)
from domefield.splat import prior_dome


class TestScenes(unittest.TestCase):

    def test_bouncer_centers_distinct(self) -> None:
        scene = gen_scene("bouncer", 24, seed=0)
        self.assertEqual(scene.n_frames, 24)
        rounded = {tuple(np.round(c, 9)) for c in scene.centers}
        self.assertEqual(len(rounded), 24)

    def test_spinner_orientations(self) -> None:
        scene = gen_scene("spinner", 4)
        expected = Rotation.from_euler("y", [0.0, 90.0, 180.0, 270.0], degrees=True).as_matrix()
        np.testing.assert_allclose(scene.rotations, expected, atol=1e-12)
        for t in range(1, 5):
            np.testing.assert_allclose(scene.object_transform(t).rotation, expected[t - 1], atol=1e-12)

    def test_object_inside_room(self) -> None:
        for name in ("bouncer", "spinner"):
            scene = gen_scene(name, 24)
            radius = scene.obj.bounding_radius
            self.assertTrue(np.all(scene.centers - radius > scene.room.box.lo))
            self.assertTrue(np.all(scene.centers + radius < scene.room.box.hi))
            self.assertTrue(np.all(scene.fg_bounds.contains(scene.centers)))

    def test_errors(self) -> None:
        with self.assertRaises(UnknownScene):
            gen_scene("juggler", 24)
        with self.assertRaises(ValueError):
            gen_scene("bouncer", 2)

    def test_deterministic(self) -> None:
        a = gen_scene("bouncer", 6, seed=3)
        b = gen_scene("bouncer", 6, seed=3)
        np.testing.assert_array_equal(a.room.face_colors, b.room.face_colors)
        pose = a.primary_pose(2)
        np.testing.assert_array_equal(analytic_render(a, pose, 2)[0], analytic_render(b, pose, 2)[0])
        other = gen_scene("bouncer", 6, seed=4)
        self.assertFalse(np.array_equal(a.room.face_colors, other.room.face_colors))

    def test_dome_layout(self) -> None:
        scene = gen_scene("bouncer", 6)
        views = scene.dome(3)
        self.assertEqual(len(views), len(DOME_AZIMUTHS) * len(DOME_ELEVATIONS))
        self.assertEqual(len(views), 57)
        center = scene.centers[2]
        for view in views:
            offset = center - view.pose.eye
            self.assertAlmostEqual(float(np.linalg.norm(offset)), scene.dome_radius(3))
            np.testing.assert_allclose(view.pose.forward, offset / np.linalg.norm(offset), atol=1e-9)
        self.assertEqual([v.azimuth for v in scene.eval_views(1)], list(EVAL_AZIMUTHS))


class TestAnalyticRender(unittest.TestCase):

    def test_wall_only(self) -> None:
        scene = gen_scene("bouncer", 6)
        pose = look_at_pose([0.0, 0.0, -2.0], [0.0, 0.0, -3.0], WORLD_UP, scene.intrinsics)
        rgb, mask = analytic_render(scene, pose, 1)
        np.testing.assert_array_equal(mask, 0.0)
        colors = {tuple(c) for c in rgb.reshape(-1, 3)}
        self.assertLessEqual(len(colors), 2 * 6)
        self.assertGreaterEqual(len(colors), 2)

    def test_center_pixel_hits_front_of_object(self) -> None:
        scene = gen_scene("bouncer", 6)
        t = 2
        center = scene.centers[t - 1]
        pose = look_at_pose(center + [0.0, 0.0, 2.0], center, WORLD_UP, scene.intrinsics)
        rgb, mask = analytic_render(scene, pose, t)
        self.assertEqual(float(mask[32, 32]), 1.0)
        self.assertEqual(float(mask[0, 0]), 0.0)
        direction = pixel_directions(pose, np.array([32]), np.array([32]))
        local_eye = (pose.eye - center)[None]
        hit = local_eye + scene.obj.intersect(local_eye, direction)[:, None] * direction
        self.assertLess(float(np.linalg.norm(hit[0] - [0.0, 0.0, 0.5])), 0.05)
        expected = scene.obj.albedo(hit)[0]
        np.testing.assert_allclose(rgb[32, 32], expected)

    def test_silhouette_area(self) -> None:
        scene = gen_scene("bouncer", 6)
        center = scene.centers[0]
        distance = 1.5
        pose = look_at_pose(center + [0.0, 0.0, distance], center, WORLD_UP, scene.intrinsics)
        _, mask = analytic_render(scene, pose, 1)
        r = scene.obj.radius
        radius_px = scene.intrinsics.fx * r / math.sqrt(distance ** 2 - r ** 2)
        expected = math.pi * radius_px ** 2
        self.assertLess(abs(mask.sum() - expected) / expected, 0.05)

    def test_masks_are_binary(self) -> None:
        scene = gen_scene("spinner", 6)
        _, mask = analytic_render(scene, scene.primary_pose(3), 3)
        self.assertTrue(set(np.unique(mask)) <= {0.0, 1.0})
        self.assertGreater(mask.sum(), 0.0)

    def test_dome_zero_view_matches_primary(self) -> None:
        scene = gen_scene("bouncer", 6)
        for t in (1, 4):
            zero = scene.dome(t, [0.0], [0.0])[0]
            primary = scene.primary_pose(t)
            np.testing.assert_allclose(zero.pose.matrix, primary.matrix, atol=1e-9)
            a, _ = analytic_render(scene, zero.pose, t)
            b, _ = analytic_render(scene, primary, t)
            self.assertLess(float(np.mean(np.abs(a - b))), 1e-3)

    def test_prior_dome_maps_onto_world_dome(self) -> None:
        for name in ("bouncer", "spinner"):
            scene = gen_scene(name, 8)
            for t in (1, 3):
                pose_n = scene.primary_pose(t)
                pose_d = prior_frame_pose(scene, t, pose_n)
                transform = alignment_transform(pose_n, pose_d)
                world = scene.dome(t, [-10.0, 0.0, 10.0], [0.0, 15.0])
                prior = prior_dome(pose_d, [-10.0, 0.0, 10.0], [0.0, 15.0])
                for w, p in zip(world, prior):
                    np.testing.assert_allclose(apply_transform(transform, p.pose).matrix,
                                               w.pose.matrix, atol=1e-9)


class TestDataset(unittest.TestCase):

    def test_write_full_dome(self) -> None:
        scene = gen_scene("bouncer", 3, image_size=16)
        with tempfile.TemporaryDirectory() as tmp:
            manifest = write_dataset(scene, tmp)
            self.assertEqual(len(manifest.frames), 3)
            self.assertEqual(len(manifest.dome), 57)
            images = [p for view in manifest.dome.values() for p in view["images"]]
            self.assertEqual(len(images) + len(manifest.frames), 3 + 3 * 57)
            for path in manifest.paths():
                self.assertTrue(os.path.exists(os.path.join(tmp, path)), path)
            self.assertTrue(os.path.exists(os.path.join(tmp, "frames", "0001.png")))
            self.assertTrue(os.path.exists(os.path.join(tmp, "dome", "e15_a-05", "0003.png")))
            self.assertEqual(read_dataset(tmp), manifest)
            self.assertEqual(len(manifest.eval_views), 12)

    def test_eval_only(self) -> None:
        scene = gen_scene("spinner", 3, image_size=16)
        with tempfile.TemporaryDirectory() as tmp:
            manifest = write_dataset(scene, tmp, all_views=False)
            self.assertEqual(sorted(manifest.dome), sorted(manifest.eval_views))
            restored = scene_from_manifest(read_dataset(tmp))
        np.testing.assert_array_equal(restored.rotations, scene.rotations)
        self.assertEqual(restored.primary_pose(2), scene.primary_pose(2))
        self.assertEqual(manifest.primary_pose(2), scene.primary_pose(2))

    def test_manifest_schema_checked(self) -> None:
        scene = gen_scene("spinner", 3, image_size=16)
        with tempfile.TemporaryDirectory() as tmp:
            manifest = write_dataset(scene, tmp, all_views=False)
            data = manifest.to_dict()
        data["schema"] = 99
        with self.assertRaises(ValueError):
            DatasetManifest.from_dict(data)


if __name__ == '__main__':
    unittest.main()
