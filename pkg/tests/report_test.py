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
This module tests the HTML report in `domefield/report.py`
"""

from __future__ import annotations
import base64
import os
import re
import tempfile
import unittest

import imageio.v3 as iio
import numpy as np

from domefield.metrics import MetricReport, ViewMetric, psnr_limitation_pair
from domefield.report import ReportView, generate_report_html, write_report


class TestReport(unittest.TestCase):

    def setUp(self) -> None:
        rng = np.random.default_rng(0)
        self.target = rng.uniform(0.0, 1.0, (16, 16, 3))
        self.reports = [
            MetricReport([ViewMetric("e00_a+05@1", 21.5, 0.81, 18.25, 0.5)], "global"),
            MetricReport([ViewMetric("e00_a+05@1", 24.0, 0.9)], "padded6"),
        ]
        self.views = [ReportView("e00_a+05@1", self.target, self.target * 0.5)]

    def test_tables(self) -> None:
        html = generate_report_html(self.reports, self.views, title="ablation")
        self.assertIn("<title>ablation</title>", html)
        self.assertIn("<h2>global</h2>", html)
        self.assertIn("<h2>padded6</h2>", html)
        for text in ("21.50", "0.8100", "18.25", "0.500", "24.00"):
            self.assertIn(text, html)

    def test_template_found_from_any_working_directory(self) -> None:
        cwd = os.getcwd()
        with tempfile.TemporaryDirectory() as tmp:
            os.chdir(tmp)
            try:
                html = generate_report_html(self.reports, self.views, title="elsewhere")
            finally:
                os.chdir(cwd)
        self.assertIn("<title>elsewhere</title>", html)

    def test_images_are_embedded_pngs(self) -> None:
        html = generate_report_html(self.reports, self.views)
        payloads = re.findall(r'src="data:image/png;base64,([^"]+)"', html)
        self.assertEqual(len(payloads), 3)
        for payload in payloads:
            image = iio.imread(base64.b64decode(payload), extension=".png")
            self.assertEqual(image.shape[:2], (16, 16))

    def test_limitation_panel(self) -> None:
        html = generate_report_html([], [], limitation=psnr_limitation_pair())
        self.assertIn("Blurred prediction", html)
        self.assertEqual(len(re.findall("data:image/png;base64,", html)), 6)

    def test_infinite_psnr(self) -> None:
        report = MetricReport([ViewMetric("v", float("inf"), 1.0)])
        html = generate_report_html([report], [])
        self.assertIn("<h2>metrics</h2>", html)
        self.assertIn("inf", html)

    def test_write(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "report.html")
            write_report(path, self.reports, self.views)
            with open(path) as f:
                self.assertEqual(f.read(), generate_report_html(self.reports, self.views))


if __name__ == '__main__':
    unittest.main()
