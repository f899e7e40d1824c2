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
Exception types raised across the package.

Value problems subclass ValueError, file problems subclass OSError and
runtime consistency problems subclass RuntimeError, so callers that only
know the builtin hierarchy still catch them.
"""


class DomeFieldError(Exception):
    """Base class for every error raised by domefield"""


class DegenerateLookAt(DomeFieldError, ValueError):
    pass


class RayMissesBounds(DomeFieldError, ValueError):
    pass


class FrameOutOfRange(DomeFieldError, ValueError):
    pass


class EmptyInterval(DomeFieldError, ValueError):
    pass


class BehindCamera(DomeFieldError, ValueError):
    pass


class DegenerateObject(DomeFieldError, ValueError):
    pass


class ShapeMismatch(DomeFieldError, ValueError):
    pass


class EmptyDome(DomeFieldError, ValueError):
    pass


class UnknownScene(DomeFieldError, ValueError):
    pass


class TooSmall(DomeFieldError, ValueError):
    pass


class InvalidConfig(DomeFieldError, ValueError):
    pass


class CheckpointError(DomeFieldError, OSError):
    """A checkpoint file could not be decoded"""


class BadMagic(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class StaleCache(DomeFieldError, RuntimeError):
    """Forward caches were produced with parameters that have since changed"""


class DivergedLoss(DomeFieldError, RuntimeError):
    pass
