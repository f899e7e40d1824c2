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
Training objectives and their gradients with respect to the rendered
quantities (or, for the continuity term, the raw foreground densities).
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, replace
from functools import lru_cache
from typing import Dict, List, Optional, Sequence
import logging
import math

import numpy as np

from domefield.errors import FrameOutOfRange, InvalidConfig, ShapeMismatch
from domefield.field import RadianceFieldParams, sigmoid, softplus

logger = logging.getLogger(__name__)

CUBIC_A = -0.5
NV_START_FRACTION = 0.2
LOSS_COLUMNS = ("iteration", "rec", "cont", "sr", "nv_c", "nv_sigma", "total")


@dataclass(frozen=True)
class LossWeights:
    lambda_c: float = 1.0
    lambda_sigma: float = 0.1
    lambda_sr: float = 0.5
    lambda_rec: float = 1.0
    lambda_cont: float = 1.0
    # None defers to the trainer: a fixed share of the run's iterations.
    nv_start_iteration: Optional[int] = None

    def validate(self) -> None:
        for name, value in asdict(self).items():
            if value is not None and value < 0:
                raise InvalidConfig(f"{name} must be >= 0, got {value}")

    def resolved(self, iterations: int, fraction: float = NV_START_FRACTION) -> LossWeights:
        if self.nv_start_iteration is not None:
            return self
        return replace(self, nv_start_iteration=int(fraction * iterations))

    def nv_active(self, iteration: int) -> bool:
        return iteration >= (self.nv_start_iteration or 0)


@dataclass
class LossBreakdown:
    iteration: int
    rec: float
    cont: float
    sr: float
    nv_c: float
    nv_sigma: float
    total: float

    def as_row(self) -> List:
        return [getattr(self, column) for column in LOSS_COLUMNS]


def _check_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{what}: shapes {a.shape} and {b.shape} differ")


@dataclass
class LossTerm:
    """A scalar loss and its gradient with respect to the first input."""
    value: float
    grad: np.ndarray


def loss_rec(predicted: np.ndarray, target: np.ndarray) -> LossTerm:
    """Sum over rays of squared RGB error."""
    predicted = np.asarray(predicted, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_same_shape(predicted, target, "reconstruction loss")
    residual = predicted - target
    return LossTerm(float(np.sum(residual ** 2)), 2.0 * residual)


def continuity_window_start(iteration: int, n_frames: int) -> int:
    """First frame of the three-frame window used at `iteration`, round robin over [1, N-2]."""
    if n_frames < 3:
        raise FrameOutOfRange(f"a three-frame window needs at least 3 frames, got {n_frames}")
    return iteration % (n_frames - 2) + 1


@dataclass
class ContinuityTerm:
    value: float
    # frame -> (X, Y, Z) gradient with respect to the raw density channel
    grads: Dict[int, np.ndarray]


def loss_cont(params: RadianceFieldParams, start: int, length: int = 3) -> ContinuityTerm:
    """
    Squared activated-density change between adjacent frames of the window
    [start, start + length - 1], summed over all foreground voxels.
    """
    stop = start + length - 1
    if start < 1 or stop > params.n_frames:
        raise FrameOutOfRange(f"window [{start}, {stop}] outside [1, {params.n_frames}]")
    raw = params.fg_grids[start - 1:stop, ..., 0].astype(np.float64)
    density = softplus(raw)
    diffs = density[1:] - density[:-1]
    value = float(np.sum(diffs ** 2))

    grad_density = np.zeros_like(density)
    grad_density[1:] += 2.0 * diffs
    grad_density[:-1] -= 2.0 * diffs
    grad_raw = grad_density * sigmoid(raw)
    grads = {start + i: grad_raw[i] for i in range(length)}
    return ContinuityTerm(value, grads)


def mean_adjacent_density_change(params: RadianceFieldParams) -> float:
    """Mean squared activated-density change over voxels and adjacent frame pairs."""
    if params.n_frames < 2:
        return 0.0
    density = softplus(params.fg_grids[..., 0].astype(np.float64))
    return float(np.mean((density[1:] - density[:-1]) ** 2))


@dataclass
class NovelViewTerm:
    nv_c: float
    nv_sigma: float
    grad_color: np.ndarray
    grad_fg_opacity: np.ndarray


def loss_nv(pred_color: np.ndarray, pred_fg_opacity: np.ndarray,
            target_color: np.ndarray, target_mask: np.ndarray) -> NovelViewTerm:
    """
    Color error against premultiplied pseudo ground truth and foreground
    opacity error against the pseudo shape mask, each summed over rays.
    """
    pred_color = np.asarray(pred_color, dtype=np.float64)
    pred_fg_opacity = np.asarray(pred_fg_opacity, dtype=np.float64)
    target_color = np.asarray(target_color, dtype=np.float64)
    target_mask = np.asarray(target_mask, dtype=np.float64)
    _check_same_shape(pred_color, target_color, "novel-view color loss")
    _check_same_shape(pred_fg_opacity, target_mask, "novel-view shape loss")
    color_residual = pred_color - target_color
    mask_residual = pred_fg_opacity - target_mask
    return NovelViewTerm(nv_c=float(np.sum(color_residual ** 2)),
                         nv_sigma=float(np.sum(mask_residual ** 2)),
                         grad_color=2.0 * color_residual,
                         grad_fg_opacity=2.0 * mask_residual)


def _cubic(x: np.ndarray) -> np.ndarray:
    x = np.abs(x)
    a = CUBIC_A
    near = ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    far = ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


@lru_cache(maxsize=16)
def upsampling_matrix(n: int, factor: int = 2) -> np.ndarray:
    """
    (factor * n, n) bicubic interpolation matrix with clamped borders.
    Output sample j sits at input coordinate (j + 0.5) / factor - 0.5.
    """
    out = factor * n
    matrix = np.zeros((out, n))
    for j in range(out):
        x = (j + 0.5) / factor - 0.5
        base = math.floor(x)
        for tap in range(base - 1, base + 3):
            matrix[j, min(max(tap, 0), n - 1)] += _cubic(np.array(x - tap))
    matrix.setflags(write=False)
    return matrix


class BicubicUpsampler:
    """Separable linear upsampling of (K, h, w, C) patches."""

    def __init__(self, factor: int = 2):
        self.factor = factor

    def __call__(self, patches: np.ndarray) -> np.ndarray:
        rows = upsampling_matrix(patches.shape[1], self.factor)
        cols = upsampling_matrix(patches.shape[2], self.factor)
        return np.einsum("ij,kjlc,ml->kimc", rows, patches, cols)

    def adjoint(self, grads: np.ndarray) -> np.ndarray:
        rows = upsampling_matrix(grads.shape[1] // self.factor, self.factor)
        cols = upsampling_matrix(grads.shape[2] // self.factor, self.factor)
        return np.einsum("ij,kimc,ml->kjlc", rows, grads, cols)


class FeatureExtractor(ABC):
    """
    Maps (K, H, W, C) patches to a list of feature layers, each shaped
    (K, ...). Layer l is weighted by one over its neuron count per patch.
    """

    @abstractmethod
    def layers(self, patches: np.ndarray) -> List[np.ndarray]:
        ...

    @abstractmethod
    def vjp(self, patches: np.ndarray, layer_grads: Sequence[np.ndarray]) -> np.ndarray:
        """Pull gradients with respect to each layer back onto the patches."""

    def layer_weights(self, patches: np.ndarray) -> List[float]:
        return [1.0 / int(np.prod(layer.shape[1:])) for layer in self.layers(patches)]


class IdentityFeatureExtractor(FeatureExtractor):
    def layers(self, patches):
        return [patches]

    def vjp(self, patches, layer_grads):
        return np.array(layer_grads[0], dtype=np.float64)


class GradientFeatureExtractor(FeatureExtractor):
    """Identity, horizontal forward difference and vertical forward difference."""

    def layers(self, patches):
        return [patches,
                patches[:, :, 1:] - patches[:, :, :-1],
                patches[:, 1:] - patches[:, :-1]]

    def vjp(self, patches, layer_grads):
        identity, horizontal, vertical = layer_grads
        grad = np.array(identity, dtype=np.float64)
        grad[:, :, 1:] += horizontal
        grad[:, :, :-1] -= horizontal
        grad[:, 1:] += vertical
        grad[:, :-1] -= vertical
        return grad


def loss_sr(rendered: np.ndarray, reference: np.ndarray,
            upsampler: BicubicUpsampler = None,
            extractor: FeatureExtractor = None) -> LossTerm:
    """
    L1 distance between upsampled low-resolution renders and reference
    patches plus the layer-weighted L1 distance of their features.

    Args:
        rendered: (K, h, w, 3) patches rendered at low resolution.
        reference: (K, factor*h, factor*w, 3) ground truth patches.

    Returns:
        LossTerm whose gradient is with respect to `rendered`.
    """
    upsampler = upsampler if upsampler is not None else BicubicUpsampler()
    extractor = extractor if extractor is not None else GradientFeatureExtractor()
    rendered = np.asarray(rendered, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    upsampled = upsampler(rendered)
    _check_same_shape(upsampled, reference, "super-resolution loss")

    pixel_residual = upsampled - reference
    value = float(np.sum(np.abs(pixel_residual)))
    grad = np.sign(pixel_residual)

    predicted_layers = extractor.layers(upsampled)
    reference_layers = extractor.layers(reference)
    weights = extractor.layer_weights(upsampled)
    layer_grads = []
    for predicted, target, weight in zip(predicted_layers, reference_layers, weights):
        residual = predicted - target
        value += weight * float(np.sum(np.abs(residual)))
        layer_grads.append(weight * np.sign(residual))
    grad = grad + extractor.vjp(upsampled, layer_grads)
    return LossTerm(value, upsampler.adjoint(grad))


def total_loss(rec: float, cont: float, sr: float, nv_c: float, nv_sigma: float,
               weights: LossWeights, iteration: int) -> LossBreakdown:
    if iteration < 0:
        raise ValueError(f"iteration must be >= 0, got {iteration}")
    total = weights.lambda_rec * rec + weights.lambda_cont * cont + weights.lambda_sr * sr
    if weights.nv_active(iteration):
        total += weights.lambda_c * nv_c + weights.lambda_sigma * nv_sigma
    return LossBreakdown(iteration=iteration, rec=rec, cont=cont, sr=sr,
                         nv_c=nv_c, nv_sigma=nv_sigma, total=total)
