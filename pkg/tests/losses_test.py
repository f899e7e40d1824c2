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
This module tests the training losses in `domefield/losses.py`, including
their gradients through the renderer
"""

from __future__ import annotations
import unittest

from hypothesis import given, settings, strategies as st
import numpy as np
from scipy.ndimage import correlate

from domefield.dev_util.gradcheck import check_gradient, random_field, random_rays
from domefield.errors import FrameOutOfRange, InvalidConfig, ShapeMismatch
from domefield.field import softplus
from domefield.losses import (
    BicubicUpsampler, GradientFeatureExtractor, IdentityFeatureExtractor, LossWeights,
    continuity_window_start, loss_cont, loss_nv, loss_rec, loss_sr,
    mean_adjacent_density_change, total_loss, upsampling_matrix,
)
from domefield.render import RenderMode, backward, render_rays

N_RAYS = 32
N_SAMPLES = 16


def pick(analytic: np.ndarray, rng: np.random.Generator, n: int = 12):
    candidates = np.argwhere(np.abs(analytic) > 1e-3)
    chosen = candidates[rng.choice(len(candidates), size=min(n, len(candidates)), replace=False)]
    return [tuple(c) for c in chosen]


class TestRenderedLossGradients(unittest.TestCase):
    """Analytic gradients of each loss through the renderer against central differences."""

    def setUp(self) -> None:
        self.rng = np.random.default_rng(21)
        self.params = random_field(self.rng, n_frames=3)
        self.rays = random_rays(self.rng, N_RAYS, frame_time=2)

    def assert_matches(self, f, grads, h: float = 1e-4) -> None:
        bg, fg = grads.as_arrays(self.params)
        for array, analytic in ((self.params.fg_grids, fg), (self.params.bg_grid, bg)):
            if not np.any(np.abs(analytic) > 1e-3):
                continue
            self.assertLess(check_gradient(f, array, analytic, pick(analytic, self.rng), h), 1e-3)

    def test_rec(self) -> None:
        target = self.rng.uniform(size=(N_RAYS, 3))

        def f() -> float:
            out = render_rays(self.rays, self.params, n_samples=N_SAMPLES)
            return loss_rec(out.color, target).value

        out = render_rays(self.rays, self.params, n_samples=N_SAMPLES)
        grads = backward(out, self.params, grad_color=loss_rec(out.color, target).grad)
        self.assert_matches(f, grads)

    def test_nv_color(self) -> None:
        target = self.rng.uniform(size=(N_RAYS, 3))
        mask = (self.rng.uniform(size=N_RAYS) > 0.5).astype(np.float64)

        def f() -> float:
            out = render_rays(self.rays, self.params, RenderMode.FOREGROUND_ONLY, n_samples=N_SAMPLES)
            return loss_nv(out.color, out.fg_opacity, target, mask).nv_c

        out = render_rays(self.rays, self.params, RenderMode.FOREGROUND_ONLY, n_samples=N_SAMPLES)
        term = loss_nv(out.color, out.fg_opacity, target, mask)
        grads = backward(out, self.params, grad_color=term.grad_color)
        bg, _ = grads.as_arrays(self.params)
        np.testing.assert_array_equal(bg, 0.0)
        self.assert_matches(f, grads)

    def test_nv_sigma(self) -> None:
        target = self.rng.uniform(size=(N_RAYS, 3))
        mask = (self.rng.uniform(size=N_RAYS) > 0.5).astype(np.float64)

        def f() -> float:
            out = render_rays(self.rays, self.params, RenderMode.FOREGROUND_ONLY, n_samples=N_SAMPLES)
            return loss_nv(out.color, out.fg_opacity, target, mask).nv_sigma

        out = render_rays(self.rays, self.params, RenderMode.FOREGROUND_ONLY, n_samples=N_SAMPLES)
        term = loss_nv(out.color, out.fg_opacity, target, mask)
        grads = backward(out, self.params, grad_fg_opacity=term.grad_fg_opacity)
        self.assert_matches(f, grads)

    def test_sr(self) -> None:
        # 32 rays as two 4x4 low-resolution patches.
        reference = self.rng.uniform(size=(2, 8, 8, 3))

        def value() -> float:
            out = render_rays(self.rays, self.params, n_samples=N_SAMPLES)
            return loss_sr(out.color.reshape(2, 4, 4, 3), reference).value

        out = render_rays(self.rays, self.params, n_samples=N_SAMPLES)
        term = loss_sr(out.color.reshape(2, 4, 4, 3), reference)
        grads = backward(out, self.params, grad_color=term.grad.reshape(-1, 3))
        self.assert_matches(value, grads, h=1e-6)

    def test_cont(self) -> None:
        term = loss_cont(self.params, 1)

        def f() -> float:
            return loss_cont(self.params, 1).value

        analytic = np.zeros(self.params.fg_grids.shape)
        for frame, grad in term.grads.items():
            analytic[frame - 1, ..., 0] = grad
        indices = pick(analytic, self.rng, 20)
        self.assertLess(check_gradient(f, self.params.fg_grids, analytic, indices), 1e-3)


class TestReconstruction(unittest.TestCase):

    def test_value_and_grad(self) -> None:
        term = loss_rec(np.array([[0.5, 0.5, 0.5]]), np.array([[0.0, 0.5, 1.0]]))
        self.assertAlmostEqual(term.value, 0.5)
        np.testing.assert_allclose(term.grad, [[1.0, 0.0, -1.0]])

    def test_shape_mismatch(self) -> None:
        with self.assertRaises(ShapeMismatch):
            loss_rec(np.zeros((2, 3)), np.zeros((3, 3)))


class TestContinuity(unittest.TestCase):

    def test_window_round_robin(self) -> None:
        starts = [continuity_window_start(i, 6) for i in range(9)]
        self.assertEqual(starts, [1, 2, 3, 4, 1, 2, 3, 4, 1])
        self.assertEqual(continuity_window_start(5, 3), 1)
        with self.assertRaises(FrameOutOfRange):
            continuity_window_start(0, 2)

    def test_identical_frames_cost_nothing(self) -> None:
        params = random_field(np.random.default_rng(0), n_frames=4)
        params.fg_grids[:] = params.fg_grids[0]
        term = loss_cont(params, 2)
        self.assertEqual(term.value, 0.0)
        self.assertEqual(sorted(term.grads), [2, 3, 4])
        for grad in term.grads.values():
            np.testing.assert_array_equal(grad, 0.0)
        self.assertEqual(mean_adjacent_density_change(params), 0.0)

    def test_value(self) -> None:
        params = random_field(np.random.default_rng(1), n_frames=3)
        density = softplus(params.fg_grids[..., 0])
        expected = np.sum((density[1] - density[0]) ** 2) + np.sum((density[2] - density[1]) ** 2)
        self.assertAlmostEqual(loss_cont(params, 1).value, float(expected), places=8)

    def test_window_bounds(self) -> None:
        params = random_field(np.random.default_rng(0), n_frames=3)
        with self.assertRaises(FrameOutOfRange):
            loss_cont(params, 2)
        with self.assertRaises(FrameOutOfRange):
            loss_cont(params, 0)


class TestNovelView(unittest.TestCase):

    def test_values(self) -> None:
        term = loss_nv(np.array([[0.2, 0.4, 0.6]]), np.array([0.75]),
                       np.array([[0.2, 0.4, 0.1]]), np.array([1.0]))
        self.assertAlmostEqual(term.nv_c, 0.25)
        self.assertAlmostEqual(term.nv_sigma, 0.0625)
        np.testing.assert_allclose(term.grad_fg_opacity, [-0.5])

    def test_shape_mismatch(self) -> None:
        with self.assertRaises(ShapeMismatch):
            loss_nv(np.zeros((2, 3)), np.zeros(2), np.zeros((2, 3)), np.zeros(3))


class TestSuperResolution(unittest.TestCase):

    def test_matrix_rows_sum_to_one(self) -> None:
        for n in (1, 2, 5, 16):
            matrix = upsampling_matrix(n)
            self.assertEqual(matrix.shape, (2 * n, n))
            np.testing.assert_allclose(matrix.sum(axis=1), 1.0, atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=10_000))
    def test_adjoint(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        upsampler = BicubicUpsampler()
        x = rng.normal(size=(2, 3, 5, 3))
        y = rng.normal(size=(2, 6, 10, 3))
        self.assertAlmostEqual(float(np.sum(upsampler(x) * y)),
                               float(np.sum(x * upsampler.adjoint(y))), places=9)

    def test_constant_patch(self) -> None:
        patch = np.full((1, 4, 4, 3), 0.3)
        np.testing.assert_allclose(BicubicUpsampler()(patch), 0.3, atol=1e-12)
        term = loss_sr(patch, np.full((1, 8, 8, 3), 0.3))
        self.assertAlmostEqual(term.value, 0.0, places=10)

    def test_layer_weights(self) -> None:
        patches = np.zeros((2, 8, 8, 3))
        weights = GradientFeatureExtractor().layer_weights(patches)
        self.assertEqual(weights, [1.0 / 192, 1.0 / 168, 1.0 / 168])
        self.assertEqual(IdentityFeatureExtractor().layer_weights(patches), [1.0 / 192])

    def test_gradient_layers_match_dense_filter(self) -> None:
        x = np.random.default_rng(9).normal(size=(2, 7, 9, 3))
        identity, horizontal, vertical = GradientFeatureExtractor().layers(x)
        difference = np.array([-1.0, 1.0])
        dense_h = correlate(x, difference.reshape(1, 1, 2, 1), mode="constant")[:, :, 1:]
        dense_v = correlate(x, difference.reshape(1, 2, 1, 1), mode="constant")[:, 1:]
        np.testing.assert_array_equal(identity, x)
        np.testing.assert_allclose(horizontal, dense_h, atol=1e-12)
        np.testing.assert_allclose(vertical, dense_v, atol=1e-12)

    def test_feature_vjp(self) -> None:
        rng = np.random.default_rng(3)
        extractor = GradientFeatureExtractor()
        x = rng.normal(size=(1, 5, 6, 3))
        grads = [rng.normal(size=layer.shape) for layer in extractor.layers(x)]
        lhs = sum(float(np.sum(layer * g)) for layer, g in zip(extractor.layers(x), grads))
        rhs = float(np.sum(x * extractor.vjp(x, grads)))
        self.assertAlmostEqual(lhs, rhs, places=9)

    def test_shape_mismatch(self) -> None:
        with self.assertRaises(ShapeMismatch):
            loss_sr(np.zeros((1, 4, 4, 3)), np.zeros((1, 6, 6, 3)))


class TestTotal(unittest.TestCase):

    def test_novel_view_terms_gated(self) -> None:
        weights = LossWeights(lambda_c=2.0, lambda_sigma=0.5, lambda_sr=0.5, lambda_rec=1.0,
                              lambda_cont=3.0, nv_start_iteration=10)
        before = total_loss(1.0, 1.0, 2.0, 4.0, 4.0, weights, 9)
        after = total_loss(1.0, 1.0, 2.0, 4.0, 4.0, weights, 10)
        self.assertAlmostEqual(before.total, 1.0 + 3.0 + 1.0)
        self.assertAlmostEqual(after.total, 5.0 + 8.0 + 2.0)
        self.assertEqual(after.as_row(), [10, 1.0, 1.0, 2.0, 4.0, 4.0, after.total])
        with self.assertRaises(ValueError):
            total_loss(0.0, 0.0, 0.0, 0.0, 0.0, weights, -1)

    def test_default_schedule(self) -> None:
        weights = LossWeights().resolved(5000)
        self.assertEqual(weights.nv_start_iteration, 1000)
        self.assertFalse(weights.nv_active(999))
        self.assertTrue(weights.nv_active(1000))
        explicit = LossWeights(nv_start_iteration=7).resolved(5000)
        self.assertEqual(explicit.nv_start_iteration, 7)

    def test_negative_weight(self) -> None:
        with self.assertRaises(InvalidConfig):
            LossWeights(lambda_sr=-1.0).validate()


if __name__ == '__main__':
    unittest.main()
