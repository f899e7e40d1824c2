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
INI configuration for training runs.

    [train]     TrainConfig scalar fields
    [weights]   LossWeights fields
    [sampling]  strategy = global | mask | blurred | padded, pad = <int>
    [dome]      azimuths, elevations as comma-separated degrees

Unknown keys are rejected so typos do not silently fall back to defaults.
"""

from dataclasses import fields, replace
from typing import Any, Dict, Optional
import configparser
import logging

from domefield.errors import InvalidConfig
from domefield.losses import LossWeights
from domefield.sampling import SamplingStrategy
from domefield.trainer import TrainConfig

logger = logging.getLogger(__name__)

_TRAIN_KEYS = [f.name for f in fields(TrainConfig)
               if f.name not in ("weights", "strategy", "azimuths", "elevations")]
_WEIGHT_KEYS = {f.name for f in fields(LossWeights)}


def _number_list(text: str):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _coerce(name: str, text: str, default: Any) -> Any:
    try:
        if isinstance(default, bool):
            return text.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise InvalidConfig(f"invalid value {text!r} for {name}")
    return text


def apply_overrides(config: TrainConfig, values: Dict[str, Dict[str, str]]) -> TrainConfig:
    """Apply section -> key -> string values on top of `config`."""
    updates: Dict[str, Any] = {}
    for key, text in values.get("train", {}).items():
        if key not in _TRAIN_KEYS:
            raise InvalidConfig(f"unknown [train] key {key!r}")
        updates[key] = _coerce(key, text, getattr(config, key))

    weight_updates: Dict[str, Any] = {}
    for key, text in values.get("weights", {}).items():
        if key not in _WEIGHT_KEYS:
            raise InvalidConfig(f"unknown [weights] key {key!r}")
        if key == "nv_start_iteration":
            weight_updates[key] = None if not text.strip() else _coerce(key, text, 0)
        else:
            weight_updates[key] = _coerce(key, text, 0.0)
    if weight_updates:
        updates["weights"] = replace(config.weights, **weight_updates)

    sampling = values.get("sampling", {})
    unknown = set(sampling) - {"strategy", "pad"}
    if unknown:
        raise InvalidConfig(f"unknown [sampling] keys {sorted(unknown)}")
    if sampling:
        name = sampling.get("strategy", config.strategy.kind.value)
        pad = _coerce("pad", sampling.get("pad", str(config.strategy.pad)), 0)
        try:
            updates["strategy"] = SamplingStrategy.parse(name, pad)
        except ValueError as e:
            raise InvalidConfig(str(e))

    dome = values.get("dome", {})
    unknown = set(dome) - {"azimuths", "elevations"}
    if unknown:
        raise InvalidConfig(f"unknown [dome] keys {sorted(unknown)}")
    for key in ("azimuths", "elevations"):
        if key in dome:
            try:
                updates[key] = _number_list(dome[key])
            except ValueError:
                raise InvalidConfig(f"invalid {key} list {dome[key]!r}")

    unknown_sections = set(values) - {"train", "weights", "sampling", "dome"}
    if unknown_sections:
        raise InvalidConfig(f"unknown config sections {sorted(unknown_sections)}")
    return replace(config, **updates)


def load_config(path: str, base: Optional[TrainConfig] = None) -> TrainConfig:
    parser = configparser.ConfigParser()
    with open(path, "r") as f:
        parser.read_file(f)
    values = {section: dict(parser.items(section)) for section in parser.sections()}
    config = apply_overrides(base if base is not None else TrainConfig(), values)
    config.validate()
    logger.info("loaded training config from %s", path)
    return config


def save_config(config: TrainConfig, path: str) -> None:
    parser = configparser.ConfigParser()
    parser["train"] = {key: repr(getattr(config, key)) if isinstance(getattr(config, key), float)
                       else str(getattr(config, key)) for key in _TRAIN_KEYS}
    weights = config.weights
    parser["weights"] = {
        f.name: "" if getattr(weights, f.name) is None else repr(getattr(weights, f.name))
        for f in fields(LossWeights)}
    parser["sampling"] = {"strategy": config.strategy.kind.value, "pad": str(config.strategy.pad)}
    parser["dome"] = {"azimuths": ", ".join(repr(a) for a in config.azimuths),
                      "elevations": ", ".join(repr(e) for e in config.elevations)}
    with open(path, "w") as f:
        parser.write(f)
