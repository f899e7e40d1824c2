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
This module tests INI loading and saving in `domefield/config.py`
"""

from __future__ import annotations
import os
import tempfile
import unittest

from domefield.config import apply_overrides, load_config, save_config
from domefield.errors import InvalidConfig
from domefield.losses import LossWeights
from domefield.sampling import SamplingStrategy, StrategyKind
from domefield.trainer import TrainConfig


class TestConfig(unittest.TestCase):

    def setUp(self) -> None:
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def write(self, text: str) -> str:
        path = os.path.join(self.tmp.name, "run.ini")
        with open(path, "w") as f:
            f.write(text)
        return path

    def test_load(self) -> None:
        path = self.write(
            "[train]\niterations = 40\nlearning_rate = 0.05\nseed = 7\n\n"
            "[weights]\nlambda_sr = 0\nnv_start_iteration = 10\n\n"
            "[sampling]\nstrategy = padded\npad = 4\n\n"
            "[dome]\nazimuths = -10, 0, 10\nelevations = 0\n")
        config = load_config(path)
        self.assertEqual(config.iterations, 40)
        self.assertEqual(config.learning_rate, 0.05)
        self.assertEqual(config.seed, 7)
        self.assertEqual(config.weights, LossWeights(lambda_sr=0.0, nv_start_iteration=10))
        self.assertEqual(config.strategy, SamplingStrategy(StrategyKind.PADDED_BBOX, 4))
        self.assertEqual(config.strategy.tag, "padded4")
        self.assertEqual(config.azimuths, (-10.0, 0.0, 10.0))
        self.assertEqual(config.elevations, (0.0,))
        self.assertEqual(config.n_samples, TrainConfig().n_samples)

    def test_base_is_kept_for_missing_keys(self) -> None:
        path = self.write("[train]\nseed = 3\n")
        base = TrainConfig(iterations=12, n_samples=8)
        config = load_config(path, base)
        self.assertEqual((config.iterations, config.n_samples, config.seed), (12, 8, 3))

    def test_save_then_load(self) -> None:
        config = TrainConfig(iterations=33, adam_eps=1e-7, strategy=SamplingStrategy.parse("mask"),
                             weights=LossWeights(lambda_c=0.3, nv_start_iteration=5),
                             azimuths=(-5.0, 5.0), elevations=(0.0, 15.0))
        path = os.path.join(self.tmp.name, "saved.ini")
        save_config(config, path)
        self.assertEqual(load_config(path), config)
        save_config(TrainConfig(), path)
        self.assertEqual(load_config(path), TrainConfig())

    def test_overrides_in_memory(self) -> None:
        config = apply_overrides(TrainConfig(), {"train": {"workers": "4"},
                                                 "sampling": {"strategy": "global"}})
        self.assertEqual(config.workers, 4)
        self.assertEqual(config.strategy.kind, StrategyKind.GLOBAL)
        self.assertEqual(apply_overrides(config, {}), config)

    def test_rejects_unknown_or_invalid(self) -> None:
        cases = [
            "[train]\niteration = 10\n",
            "[weights]\nlambda_x = 1\n",
            "[sampling]\nradius = 3\n",
            "[sampling]\nstrategy = everywhere\n",
            "[dome]\nradius = 2\n",
            "[dome]\nazimuths = 0, left\n",
            "[optimizer]\nlr = 1\n",
            "[train]\niterations = ten\n",
            "[train]\nlearning_rate = 0\n",
            "[weights]\nlambda_rec = -1\n",
        ]
        for text in cases:
            with self.subTest(text=text):
                with self.assertRaises(InvalidConfig):
                    load_config(self.write(text))


if __name__ == '__main__':
    unittest.main()
