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

"""8-bit PNG helpers. Images are float arrays in [0, 1] everywhere else."""

import base64
import os

import imageio.v3 as iio
import numpy as np


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path: str, image: np.ndarray) -> None:
    """Write an (H, W, 3) color or (H, W) grayscale float image."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    iio.imwrite(path, to_uint8(image), extension=".png")


def read_rgb(path: str) -> np.ndarray:
    image = iio.imread(path)
    if image.ndim == 2:
        image = np.repeat(image[..., None], 3, axis=-1)
    return image[..., :3].astype(np.float64) / 255.0


def read_gray(path: str) -> np.ndarray:
    image = iio.imread(path)
    if image.ndim == 3:
        image = image[..., 0]
    return image.astype(np.float64) / 255.0


def png_base64(image: np.ndarray) -> str:
    """Inline-able base64 PNG payload for HTML reports."""
    encoded = iio.imwrite("<bytes>", to_uint8(image), extension=".png")
    return base64.b64encode(encoded).decode("utf-8")
