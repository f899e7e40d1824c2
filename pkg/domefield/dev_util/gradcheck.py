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
Finite-difference checks of the hand-derived render gradients.

    python -m domefield.dev_util.gradcheck [--seed N] [--checks K]

prints the worst relative error per render mode on a random 8^3 field.
"""

from typing import Callable, Iterable, Tuple
import argparse
import logging

import numpy as np

from domefield.field import RadianceFieldParams
from domefield.geometry import Box, RayBatch
from domefield.render import GradientAccumulator, RenderMode, backward, render_rays

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-4
ERROR_FLOOR = 1e-6


def check_gradient(f: Callable[[], float], x: np.ndarray, analytic: np.ndarray,
                   indices: Iterable[Tuple[int, ...]], h: float = DEFAULT_STEP) -> float:
    """
    Compare `analytic` against central differences of `f` at the given
    entries of `x`, which is perturbed in place and restored.

    Returns:
        Maximum of |a - n| / max(|a|, |n|, 1e-6) over the checked entries.
    """
    worst = 0.0
    for index in indices:
        original = x[index]
        x[index] = original + h
        plus = f()
        x[index] = original - h
        minus = f()
        x[index] = original
        numeric = (plus - minus) / (2.0 * h)
        a = float(analytic[index])
        error = abs(a - numeric) / max(abs(a), abs(numeric), ERROR_FLOOR)
        worst = max(worst, error)
    return worst


def random_field(rng: np.random.Generator, resolution: int = 8,
                 n_frames: int = 2) -> RadianceFieldParams:
    """A float64 field with both branches over the unit cube around the origin."""
    bounds = Box.cube(np.zeros(3), 1.0)
    bg = rng.normal(0.0, 1.0, (resolution,) * 3 + (4,))
    fg = rng.normal(0.0, 1.0, (n_frames,) + (resolution,) * 3 + (4,))
    return RadianceFieldParams(bg, fg, bounds, Box.cube(np.zeros(3), 0.6))


def random_rays(rng: np.random.Generator, n_rays: int, frame_time: int = 1) -> RayBatch:
    """Rays from a sphere of radius 3 through random points near the origin."""
    origins = rng.normal(size=(n_rays, 3))
    origins = 3.0 * origins / np.linalg.norm(origins, axis=1, keepdims=True)
    targets = rng.uniform(-0.4, 0.4, (n_rays, 3))
    directions = targets - origins
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    along = np.einsum("ij,ij->i", targets - origins, directions)
    return RayBatch(origins=origins, directions=directions,
                    t_near=along - 1.0, t_far=along + 1.0,
                    hit=np.ones(n_rays, dtype=bool), frame_time=frame_time)


def render_objective(rays: RayBatch, params: RadianceFieldParams, mode: RenderMode,
                     weights: Tuple[np.ndarray, np.ndarray, np.ndarray],
                     n_samples: int = 16) -> Callable[[], float]:
    w_color, w_opacity, w_fg = weights

    def f() -> float:
        out = render_rays(rays, params, mode, n_samples=n_samples)
        return float(np.sum(w_color * out.color) + np.sum(w_opacity * out.opacity)
                     + np.sum(w_fg * out.fg_opacity))
    return f


def check_render(params: RadianceFieldParams, rays: RayBatch, mode: RenderMode,
                 rng: np.random.Generator, n_checks: int = 20,
                 n_samples: int = 16) -> float:
    """Worst relative error over random touched entries of both branches."""
    n_rays = len(rays)
    weights = (rng.normal(size=(n_rays, 3)), rng.normal(size=n_rays), rng.normal(size=n_rays))
    out = render_rays(rays, params, mode, n_samples=n_samples)
    grads = backward(out, params, *weights, accumulator=GradientAccumulator(params))
    bg_grad, fg_grad = grads.as_arrays(params)
    f = render_objective(rays, params, mode, weights, n_samples)

    worst = 0.0
    targets = [(params.fg_grids, fg_grad)]
    if mode is RenderMode.FULL:
        targets.append((params.bg_grid, bg_grad))
    for array, analytic in targets:
        candidates = np.argwhere(np.abs(analytic) > 1e-3)
        if len(candidates) == 0:
            continue
        picks = candidates[rng.choice(len(candidates), size=min(n_checks, len(candidates)),
                                      replace=False)]
        worst = max(worst, check_gradient(f, array, analytic, [tuple(p) for p in picks]))
    return worst


def main() -> None:
    parser = argparse.ArgumentParser(description="Check render gradients against finite differences")
    parser.add_argument("--seed", type=int, default=0, help="random seed")
    parser.add_argument("--checks", type=int, default=20, help="entries checked per branch")
    parser.add_argument("--rays", type=int, default=8, help="rays per batch")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    rng = np.random.default_rng(args.seed)
    params = random_field(rng)
    rays = random_rays(rng, args.rays)
    for mode in RenderMode:
        worst = check_render(params, rays, mode, rng, args.checks)
        logger.info("%s: max relative error %.3e", mode.value, worst)


if __name__ == "__main__":
    main()
