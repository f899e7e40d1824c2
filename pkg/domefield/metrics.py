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

"""Image quality metrics, error heatmaps and per-view metric reports."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence
import csv
import logging
import math

import numpy as np
from scipy.ndimage import gaussian_filter
from skimage.metrics import structural_similarity

from domefield.errors import ShapeMismatch, TooSmall
from domefield.sampling import mask_bbox

logger = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5

# Heatmap color ramp stops (position, rgb), dark to hot.
HEATMAP_STOPS = (
    (0.00, (0.00, 0.00, 0.00)),
    (0.25, (0.34, 0.06, 0.43)),
    (0.50, (0.73, 0.21, 0.33)),
    (0.75, (0.98, 0.55, 0.04)),
    (1.00, (0.99, 1.00, 0.64)),
)


def _pair(a, b, what: str):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{what}: shapes {a.shape} and {b.shape} differ")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR in dB for images in [0, 1]; identical images give math.inf."""
    a, b = _pair(a, b, "psnr")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """
    Mean SSIM with an 11x11 Gaussian window (sigma 1.5), dynamic range 1,
    averaged over channels.

    Raises:
        TooSmall: if either side is shorter than the window.
    """
    a, b = _pair(a, b, "ssim")
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise TooSmall(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape[:2]}")
    return float(structural_similarity(
        a, b, data_range=1.0, channel_axis=-1 if a.ndim == 3 else None,
        gaussian_weights=True, sigma=SSIM_SIGMA, use_sample_covariance=False))


def heatmap_colors(values: np.ndarray) -> np.ndarray:
    positions = [stop[0] for stop in HEATMAP_STOPS]
    colors = np.array([stop[1] for stop in HEATMAP_STOPS])
    values = np.clip(values, 0.0, 1.0)
    return np.stack([np.interp(values, positions, colors[:, c]) for c in range(3)], axis=-1)


def squared_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = _pair(a, b, "squared error")
    error = (a - b) ** 2
    return error.mean(axis=-1) if error.ndim == 3 else error


def error_heatmap(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pixel squared error normalized to its maximum and mapped through HEATMAP_STOPS."""
    error = squared_error(a, b)
    peak = error.max() if error.size else 0.0
    normalized = error / peak if peak > 0 else np.zeros_like(error)
    return heatmap_colors(normalized)


def masked_psnr(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> float:
    """PSNR inside the bounding box of `mask`; the whole image when the mask is empty."""
    a, b = _pair(a, b, "masked psnr")
    box = mask_bbox(mask)
    if box is None:
        return psnr(a, b)
    return psnr(a[box.y0:box.y1 + 1, box.x0:box.x1 + 1], b[box.y0:box.y1 + 1, box.x0:box.x1 + 1])


def mask_iou(predicted: np.ndarray, target: np.ndarray, threshold: float = 0.5) -> float:
    predicted, target = _pair(predicted, target, "mask iou")
    p = predicted > threshold
    g = target > threshold
    union = np.count_nonzero(p | g)
    if union == 0:
        return 1.0
    return np.count_nonzero(p & g) / union


class PsnrLimitationPair(NamedTuple):
    target: np.ndarray
    sharp: np.ndarray
    blurred: np.ndarray


def psnr_limitation_pair(size: int = 64, shift: int = 2, sigma: float = 2.0) -> PsnrLimitationPair:
    """
    A vertical step edge, a sharp prediction with the edge displaced by
    `shift` pixels and a blurred prediction with the edge in place.
    """
    columns = np.arange(size)
    target = np.where(columns < size // 2, 0.2, 0.8)
    sharp = np.where(columns < size // 2 + shift, 0.2, 0.8)
    blurred = gaussian_filter(target, sigma, mode="nearest")

    def image(row):
        return np.repeat(np.broadcast_to(row, (size, size))[..., None], 3, axis=-1).copy()

    return PsnrLimitationPair(image(target), image(sharp), image(blurred))


@dataclass
class ViewMetric:
    view: str
    psnr: float
    ssim: float
    masked_psnr: Optional[float] = None
    mask_iou: Optional[float] = None


@dataclass
class MetricReport:
    entries: List[ViewMetric] = field(default_factory=list)
    tag: str = ""

    @property
    def mean_psnr(self) -> float:
        return _mean([e.psnr for e in self.entries])

    @property
    def mean_ssim(self) -> float:
        return _mean([e.ssim for e in self.entries])

    @property
    def mean_masked_psnr(self) -> Optional[float]:
        values = [e.masked_psnr for e in self.entries if e.masked_psnr is not None]
        return _mean(values) if values else None

    @property
    def mean_mask_iou(self) -> Optional[float]:
        values = [e.mask_iou for e in self.entries if e.mask_iou is not None]
        return _mean(values) if values else None

    def view_ids(self) -> List[str]:
        return [e.view for e in self.entries]

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["tag", "view", "psnr", "ssim", "masked_psnr", "mask_iou"])
            for e in self.entries:
                writer.writerow([self.tag, e.view, e.psnr, e.ssim,
                                 "" if e.masked_psnr is None else e.masked_psnr,
                                 "" if e.mask_iou is None else e.mask_iou])
            writer.writerow([self.tag, "mean", self.mean_psnr, self.mean_ssim,
                             "" if self.mean_masked_psnr is None else self.mean_masked_psnr,
                             "" if self.mean_mask_iou is None else self.mean_mask_iou])

    def table(self) -> str:
        lines = []
        if self.tag:
            lines.append(f"[{self.tag}]")
        lines.append(f"{'view':<12} {'psnr':>8} {'ssim':>7} {'fg psnr':>8} {'iou':>6}")
        rows = [(e.view, e.psnr, e.ssim, e.masked_psnr, e.mask_iou) for e in self.entries]
        rows.append(("mean", self.mean_psnr, self.mean_ssim,
                     self.mean_masked_psnr, self.mean_mask_iou))
        for view, p, s, mp, iou in rows:
            lines.append(f"{view:<12} {_fmt(p, 8, 2)} {_fmt(s, 7, 4)} "
                         f"{_fmt(mp, 8, 2)} {_fmt(iou, 6, 3)}")
        return "\n".join(lines)


def _mean(values: Sequence[float]) -> float:
    if not values:
        return math.nan
    if any(math.isinf(v) for v in values):
        return math.inf
    return float(np.mean(values))


def _fmt(value: Optional[float], width: int, digits: int) -> str:
    if value is None:
        return f"{'-':>{width}}"
    if math.isinf(value):
        return f"{'inf':>{width}}"
    return f"{value:>{width}.{digits}f}"


@dataclass
class ViewPair:
    view: str
    predicted: np.ndarray
    target: np.ndarray
    target_mask: Optional[np.ndarray] = None
    predicted_mask: Optional[np.ndarray] = None


def _evaluate_one(pair: ViewPair) -> ViewMetric:
    metric = ViewMetric(pair.view, psnr(pair.predicted, pair.target), ssim(pair.predicted, pair.target))
    if pair.target_mask is not None:
        metric.masked_psnr = masked_psnr(pair.predicted, pair.target, pair.target_mask)
        if pair.predicted_mask is not None:
            metric.mask_iou = mask_iou(pair.predicted_mask, pair.target_mask)
    return metric


def evaluate(pairs: Sequence[ViewPair], tag: str = "", workers: int = 1) -> MetricReport:
    """Metrics for every pair, in input order."""
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(_evaluate_one, pairs))
    else:
        entries = [_evaluate_one(pair) for pair in pairs]
    return MetricReport(entries, tag)
