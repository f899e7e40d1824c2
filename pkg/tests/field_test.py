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
This module tests the grid field in `domefield/field.py`
"""

from __future__ import annotations
import io
import unittest

from hypothesis import given, settings, strategies as st
import numpy as np

from domefield.errors import BadMagic, CheckpointError, FrameOutOfRange, VersionMismatch
from domefield.field import (
    FORMAT_VERSION, MAGIC, FieldSample, RadianceFieldParams, composite_branches,
    query_background, query_foreground, read_params, softplus, softplus_inverse,
    trilinear, write_params,
)
from domefield.geometry import Box

BG = Box([-3.0, -1.5, -3.0], [3.0, 2.5, 3.0])
FG = Box.cube([0.0, 0.0, 0.0], 1.0)


def random_params(seed: int = 0, n_frames: int = 3) -> RadianceFieldParams:
    rng = np.random.default_rng(seed)
    bg = rng.normal(size=(4, 5, 6, 4)).astype(np.float32)
    fg = rng.normal(size=(n_frames, 3, 3, 3, 4)).astype(np.float32)
    return RadianceFieldParams(bg, fg, BG, FG)


class TestActivations(unittest.TestCase):

    def test_softplus_inverse(self) -> None:
        values = np.array([1e-4, 0.01, 0.5, 3.0, 20.0])
        np.testing.assert_allclose(softplus(softplus_inverse(values)), values, rtol=1e-10)

    def test_init_density(self) -> None:
        params = RadianceFieldParams.create(BG, FG, 2, bg_resolution=4, fg_resolution=3,
                                            init_density=0.01)
        sample = query_foreground(np.zeros(3), 1, params)
        self.assertAlmostEqual(float(sample.density), 0.01, places=6)
        np.testing.assert_allclose(sample.color, 0.5)


class TestQueries(unittest.TestCase):

    def test_voxel_center_exact(self) -> None:
        params = random_params()
        # Center of voxel (1, 2, 3) of the 4x5x6 background grid.
        point = BG.lo + (np.array([1, 2, 3]) + 0.5) * BG.size / np.array([4, 5, 6])
        sample = query_background(point, params)
        raw = params.bg_grid[1, 2, 3].astype(np.float64)
        self.assertAlmostEqual(float(sample.density), float(softplus(raw[0])), places=5)
        np.testing.assert_allclose(sample.color, 1.0 / (1.0 + np.exp(-raw[1:])), rtol=1e-5)

    def test_midpoint_is_linear_in_raw(self) -> None:
        params = random_params()
        a = FG.lo + (np.array([0, 1, 1]) + 0.5) * FG.size / 3
        b = FG.lo + (np.array([1, 1, 1]) + 0.5) * FG.size / 3
        interp = trilinear((a + b)[None] / 2, FG, (3, 3, 3))
        grid = params.fg_grids[0].reshape(-1, 4).astype(np.float64)
        raw = np.einsum("pk,pkc->pc", interp.weights, grid[interp.indices])[0]
        expected = 0.5 * (params.fg_grids[0, 0, 1, 1] + params.fg_grids[0, 1, 1, 1])
        np.testing.assert_allclose(raw, expected, atol=1e-6)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(min_value=-0.99, max_value=0.99), min_size=3, max_size=3))
    def test_weights_partition_unity(self, point) -> None:
        interp = trilinear(np.array([point]), FG, (3, 3, 3))
        self.assertAlmostEqual(float(interp.weights.sum()), 1.0, places=12)
        self.assertTrue(np.all(interp.weights >= 0.0))
        self.assertTrue(interp.inside[0])

    def test_outside_is_empty(self) -> None:
        params = random_params()
        sample = query_foreground(np.array([[2.0, 0.0, 0.0], [0.0, 0.0, 0.0]]), 2, params)
        self.assertEqual(float(sample.density[0]), 0.0)
        np.testing.assert_array_equal(sample.color[0], 0.0)
        self.assertGreater(float(sample.density[1]), 0.0)

    def test_frame_out_of_range(self) -> None:
        params = random_params(n_frames=3)
        with self.assertRaises(FrameOutOfRange):
            query_foreground(np.zeros(3), 0, params)
        with self.assertRaises(FrameOutOfRange):
            query_foreground(np.zeros(3), 4, params)
        query_foreground(np.zeros(3), 3, params)

    def test_frames_are_independent(self) -> None:
        params = random_params()
        before = query_foreground(np.zeros(3), 1, params).density
        params.fg_grids[1] += 5.0
        after = query_foreground(np.zeros(3), 1, params).density
        self.assertEqual(float(before), float(after))


class TestComposite(unittest.TestCase):

    def test_density_weighted_color(self) -> None:
        bg = FieldSample(color=np.array([1.0, 0.0, 0.0]), density=np.array(3.0))
        fg = FieldSample(color=np.array([0.0, 0.0, 1.0]), density=np.array(1.0))
        out = composite_branches(bg, fg)
        self.assertAlmostEqual(float(out.density), 4.0)
        np.testing.assert_allclose(out.color, [0.75, 0.0, 0.25], rtol=1e-7)

    def test_empty_is_black(self) -> None:
        empty = FieldSample(color=np.array([0.3, 0.6, 0.9]), density=np.array(0.0))
        out = composite_branches(empty, empty)
        np.testing.assert_array_equal(out.color, 0.0)
        self.assertEqual(float(out.density), 0.0)


class TestSerialization(unittest.TestCase):

    def test_round_trip(self) -> None:
        params = random_params(seed=4)
        stream = io.BytesIO()
        write_params(stream, params)
        stream.seek(0)
        loaded = read_params(stream)
        self.assertTrue(loaded.equals(params))
        self.assertEqual(loaded.bg_bounds, BG)
        self.assertEqual(loaded.fg_resolution, (3, 3, 3))

    def test_header(self) -> None:
        stream = io.BytesIO()
        write_params(stream, random_params())
        data = stream.getvalue()
        self.assertEqual(data[:4], MAGIC)
        self.assertEqual(int.from_bytes(data[4:8], "little"), FORMAT_VERSION)

    def test_bad_magic(self) -> None:
        with self.assertRaises(BadMagic):
            read_params(io.BytesIO(b"NOPE" + bytes(200)))

    def test_version_mismatch(self) -> None:
        stream = io.BytesIO()
        write_params(stream, random_params())
        data = bytearray(stream.getvalue())
        data[4:8] = (FORMAT_VERSION + 1).to_bytes(4, "little")
        with self.assertRaises(VersionMismatch):
            read_params(io.BytesIO(bytes(data)))

    def test_truncated(self) -> None:
        stream = io.BytesIO()
        write_params(stream, random_params())
        data = stream.getvalue()
        for cut in (6, 50, len(data) - 1):
            with self.assertRaises(CheckpointError):
                read_params(io.BytesIO(data[:cut]))


if __name__ == '__main__':
    unittest.main()
