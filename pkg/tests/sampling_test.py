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
This module tests novel-view ray sampling strategies in `domefield/sampling.py`
"""

from __future__ import annotations
import unittest

from hypothesis import given, settings, strategies as st
import numpy as np
from scipy.stats import chisquare

from domefield.sampling import (
    BBox, SamplingStrategy, StrategyKind, gaussian_blur_mask, mask_bbox, pad_bbox,
    sample_pixels, split_rays, strategy_region,
)


def square_mask(height: int = 32, width: int = 32, box=(10, 12, 15, 20)) -> np.ndarray:
    x0, y0, x1, y1 = box
    mask = np.zeros((height, width))
    mask[y0:y1 + 1, x0:x1 + 1] = 1.0
    return mask


class TestBoxes(unittest.TestCase):

    def test_mask_bbox(self) -> None:
        self.assertEqual(mask_bbox(square_mask()), BBox(10, 12, 15, 20))
        self.assertIsNone(mask_bbox(np.zeros((8, 8))))
        # exactly at threshold is background
        self.assertIsNone(mask_bbox(np.full((8, 8), 0.5)))

    def test_mask_bbox_matches_scan(self) -> None:
        rng = np.random.default_rng(8)
        for density in (0.002, 0.02, 0.3):
            mask = (rng.uniform(size=(24, 40)) < density).astype(np.float64)
            hits = [(x, y) for y in range(24) for x in range(40) if mask[y, x] > 0.5]
            if not hits:
                self.assertIsNone(mask_bbox(mask))
                continue
            xs, ys = zip(*hits)
            self.assertEqual(mask_bbox(mask), BBox(min(xs), min(ys), max(xs), max(ys)))

    def test_pad_clamps(self) -> None:
        box = pad_bbox(BBox(0, 1, 30, 31), 2, 32, 32)
        self.assertEqual(box, BBox(0, 0, 31, 31))
        self.assertEqual(pad_bbox(BBox(10, 12, 15, 20), 0, 32, 32), BBox(10, 12, 15, 20))
        with self.assertRaises(ValueError):
            pad_bbox(BBox(0, 0, 1, 1), -1, 32, 32)

    def test_area(self) -> None:
        self.assertEqual(BBox(10, 12, 15, 20).area, 6 * 9)


class TestRegions(unittest.TestCase):

    def test_global(self) -> None:
        region = strategy_region(SamplingStrategy(StrategyKind.GLOBAL), square_mask())
        self.assertTrue(region.all())

    def test_mask_only(self) -> None:
        mask = square_mask()
        region = strategy_region(SamplingStrategy(StrategyKind.MASK_ONLY), mask)
        np.testing.assert_array_equal(region, mask > 0.5)

    def test_padded(self) -> None:
        region = strategy_region(SamplingStrategy(StrategyKind.PADDED_BBOX, 2), square_mask())
        self.assertEqual(int(region.sum()), (6 + 4) * (9 + 4))
        self.assertTrue(region[10, 8])
        self.assertFalse(region[10, 7])

    def test_blurred_contains_mask(self) -> None:
        mask = square_mask()
        region = strategy_region(SamplingStrategy(StrategyKind.BLURRED_MASK), mask)
        self.assertTrue(np.all(region[mask > 0.5]))
        self.assertGreater(int(region.sum()), int((mask > 0.5).sum()))
        self.assertFalse(region.all())

    def test_blur_range(self) -> None:
        blurred = gaussian_blur_mask(square_mask(), 2.0)
        self.assertTrue(np.all((blurred >= 0.0) & (blurred <= 1.0)))
        np.testing.assert_allclose(gaussian_blur_mask(np.ones((9, 9)), 2.0), 1.0, atol=1e-12)
        with self.assertRaises(ValueError):
            gaussian_blur_mask(square_mask(), 0.0)

    def test_blur_matches_dense_convolution(self) -> None:
        mask = np.random.default_rng(5).uniform(size=(20, 26))
        sigma = 2.0
        radius = 6
        offsets = np.arange(-radius, radius + 1)
        kernel = np.exp(-0.5 * (offsets[:, None] ** 2 + offsets[None, :] ** 2) / sigma ** 2)
        kernel /= kernel.sum()
        padded = np.pad(mask, radius, mode="edge")
        windows = np.lib.stride_tricks.sliding_window_view(padded, kernel.shape)
        expected = np.einsum("ijkl,kl->ij", windows, kernel)
        np.testing.assert_allclose(gaussian_blur_mask(mask, sigma), expected, atol=1e-6)

    def test_empty_mask_falls_back_to_global(self) -> None:
        empty = np.zeros((16, 16))
        for kind in StrategyKind:
            region = strategy_region(SamplingStrategy(kind), empty)
            self.assertTrue(region.all(), kind)


class TestSamplePixels(unittest.TestCase):

    @settings(max_examples=30, deadline=None)
    @given(st.sampled_from(list(StrategyKind)), st.integers(min_value=1, max_value=400),
           st.integers(min_value=0, max_value=1000))
    def test_pixels_inside_region_and_distinct(self, kind, n, seed) -> None:
        strategy = SamplingStrategy(kind, 2)
        mask = square_mask()
        region = strategy_region(strategy, mask)
        batch = sample_pixels(strategy, mask, n, np.random.default_rng(seed))
        self.assertEqual(len(batch), min(n, int(region.sum())))
        self.assertTrue(np.all(region[batch.py, batch.px]))
        flat = batch.py * 32 + batch.px
        self.assertEqual(len(np.unique(flat)), len(flat))
        self.assertEqual(batch.strategy, strategy.tag)

    def test_padded_draws_are_uniform(self) -> None:
        strategy = SamplingStrategy(StrategyKind.PADDED_BBOX, 2)
        mask = square_mask()
        region = strategy_region(strategy, mask)
        rng = np.random.default_rng(21)
        counts = np.zeros(mask.shape, dtype=np.int64)
        for _ in range(10_000):
            batch = sample_pixels(strategy, mask, 1, rng)
            counts[batch.py, batch.px] += 1
        self.assertEqual(int(counts[~region].sum()), 0)
        self.assertGreater(chisquare(counts[region]).pvalue, 1e-3)

    def test_seeded(self) -> None:
        strategy = SamplingStrategy()
        a = sample_pixels(strategy, square_mask(), 20, np.random.default_rng(4))
        b = sample_pixels(strategy, square_mask(), 20, np.random.default_rng(4))
        np.testing.assert_array_equal(a.px, b.px)
        np.testing.assert_array_equal(a.py, b.py)

    def test_invalid_count(self) -> None:
        with self.assertRaises(ValueError):
            sample_pixels(SamplingStrategy(), square_mask(), 0, np.random.default_rng(0))


class TestStrategy(unittest.TestCase):

    def test_parse_and_tag(self) -> None:
        self.assertEqual(SamplingStrategy.parse("padded", 4).tag, "padded4")
        self.assertEqual(SamplingStrategy.parse(" Mask ").tag, "mask")
        self.assertEqual(SamplingStrategy().kind, StrategyKind.PADDED_BBOX)
        self.assertEqual(SamplingStrategy().pad, 2)
        with self.assertRaises(ValueError):
            SamplingStrategy.parse("everywhere")
        with self.assertRaises(ValueError):
            SamplingStrategy(StrategyKind.PADDED_BBOX, -1)

    def test_split_rays(self) -> None:
        self.assertEqual(split_rays(1024, 2), (512, 512))
        self.assertEqual(split_rays(7, 2), (4, 3))
        self.assertEqual(sum(split_rays(1001, 3)), 1001)


if __name__ == '__main__':
    unittest.main()
