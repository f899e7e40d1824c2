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

"""Exported modules"""

from .cli import main
from .render import RenderMode, render_image, render_rays
from .trainer import TrainConfig, load_checkpoint, train

__all__ = ["main", "RenderMode", "render_image", "render_rays",
           "TrainConfig", "load_checkpoint", "train"]
