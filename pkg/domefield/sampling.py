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
Pixel sampling for novel-view supervision: where on a pseudo ground truth
view the rays of an iteration are drawn from.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple
import logging
import math

import numpy as np
from scipy.ndimage import correlate1d

logger = logging.getLogger(__name__)

MASK_THRESHOLD = 0.5
BLUR_SIGMA = 2.0
DEFAULT_PAD = 2


class StrategyKind(Enum):
    GLOBAL = "global"
    MASK_ONLY = "mask"
    BLURRED_MASK = "blurred"
    PADDED_BBOX = "padded"


@dataclass(frozen=True)
class SamplingStrategy:
    kind: StrategyKind = StrategyKind.PADDED_BBOX
    pad: int = DEFAULT_PAD

    def __post_init__(self):
        if self.pad < 0:
            raise ValueError(f"padding must be >= 0, got {self.pad}")

    @property
    def tag(self) -> str:
        if self.kind is StrategyKind.PADDED_BBOX:
            return f"{self.kind.value}{self.pad}"
        return self.kind.value

    @classmethod
    def parse(cls, name: str, pad: int = DEFAULT_PAD) -> SamplingStrategy:
        """Build from a CLI name: global, mask, blurred or padded."""
        try:
            kind = StrategyKind(name.strip().lower())
        except ValueError:
            names = ", ".join(k.value for k in StrategyKind)
            raise ValueError(f"unknown sampling strategy {name!r}; expected one of {names}")
        return cls(kind, pad)


@dataclass(frozen=True)
class BBox:
    """Inclusive pixel box [x0, x1] x [y0, y1]."""
    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if self.x1 < self.x0 or self.y1 < self.y0:
            raise ValueError(f"invalid box {self}")

    @property
    def area(self) -> int:
        return (self.x1 - self.x0 + 1) * (self.y1 - self.y0 + 1)

    def region(self, height: int, width: int) -> np.ndarray:
        region = np.zeros((height, width), dtype=bool)
        region[self.y0:self.y1 + 1, self.x0:self.x1 + 1] = True
        return region


@dataclass
class PixelBatch:
    px: np.ndarray
    py: np.ndarray
    strategy: str

    def __len__(self) -> int:
        return self.px.shape[0]


def mask_bbox(mask: np.ndarray, threshold: float = MASK_THRESHOLD) -> Optional[BBox]:
    """Tightest box around pixels with mask > threshold, or None when there are none."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    ys, xs = np.nonzero(np.asarray(mask) > threshold)
    if xs.size == 0:
        return None
    return BBox(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


def pad_bbox(box: BBox, pad: int, width: int, height: int) -> BBox:
    if pad < 0:
        raise ValueError(f"padding must be >= 0, got {pad}")
    return BBox(max(box.x0 - pad, 0), max(box.y0 - pad, 0),
                min(box.x1 + pad, width - 1), min(box.y1 + pad, height - 1))


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3.0 * sigma))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    return kernel / kernel.sum()


def gaussian_blur_mask(mask: np.ndarray, sigma: float = BLUR_SIGMA) -> np.ndarray:
    """Separable Gaussian blur with edge-clamped borders; output stays in [0, 1]."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    kernel = gaussian_kernel(sigma)
    blurred = correlate1d(np.asarray(mask, dtype=np.float64), kernel, axis=0, mode="nearest")
    blurred = correlate1d(blurred, kernel, axis=1, mode="nearest")
    return np.clip(blurred, 0.0, 1.0)


def strategy_region(strategy: SamplingStrategy, mask: np.ndarray) -> np.ndarray:
    """Boolean (H, W) region the strategy draws from; Global when the region is empty."""
    mask = np.asarray(mask, dtype=np.float64)
    height, width = mask.shape
    full = np.ones((height, width), dtype=bool)
    kind = strategy.kind
    if kind is StrategyKind.GLOBAL:
        return full
    if kind is StrategyKind.MASK_ONLY:
        region = mask > MASK_THRESHOLD
    elif kind is StrategyKind.BLURRED_MASK:
        region = gaussian_blur_mask(mask, BLUR_SIGMA) > 0.0
    else:
        box = mask_bbox(mask, MASK_THRESHOLD)
        region = None if box is None else pad_bbox(box, strategy.pad, width, height).region(height, width)
    if region is None or not region.any():
        logger.debug("%s region is empty, falling back to global sampling", strategy.tag)
        return full
    return region


def sample_pixels(strategy: SamplingStrategy, mask: np.ndarray, n: int,
                  rng: np.random.Generator) -> PixelBatch:
    """
    Draw n distinct pixels uniformly from the strategy's region. When the
    region holds fewer than n pixels, every pixel of the region is returned.
    """
    if n < 1:
        raise ValueError(f"at least one pixel must be requested, got {n}")
    region = strategy_region(strategy, mask)
    flat = np.flatnonzero(region)
    count = min(n, flat.size)
    chosen = rng.choice(flat, size=count, replace=False)
    py, px = np.unravel_index(chosen, region.shape)
    return PixelBatch(px.astype(np.int64), py.astype(np.int64), strategy.tag)


def split_rays(total: int, parts: int) -> Tuple[int, ...]:
    """Split a ray budget as evenly as possible, earlier parts taking the remainder."""
    base, extra = divmod(total, parts)
    return tuple(base + (1 if i < extra else 0) for i in range(parts))
