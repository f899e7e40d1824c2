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

"""HTML evaluation report"""

from dataclasses import dataclass
from typing import Optional, Sequence

from jinja2 import Environment, PackageLoader
import numpy as np

from domefield.imaging import png_base64
from domefield.metrics import (
    MetricReport, PsnrLimitationPair, error_heatmap, psnr, ssim,
)

_ENVIRONMENT = Environment(loader=PackageLoader("domefield", "templates"))


@dataclass
class ReportView:
    view: str
    target: np.ndarray
    predicted: np.ndarray


def _panel(view: str, target: np.ndarray, predicted: np.ndarray) -> dict:
    return {
        "view": view,
        "target": png_base64(target),
        "predicted": png_base64(predicted),
        "heatmap": png_base64(error_heatmap(predicted, target)),
    }


def generate_report_html(reports: Sequence[MetricReport], views: Sequence[ReportView],
                         title: str = "domefield evaluation",
                         limitation: Optional[PsnrLimitationPair] = None) -> str:
    template = _ENVIRONMENT.get_template("report.html")

    demo = None
    if limitation is not None:
        demo = {
            "sharp": _panel("sharp", limitation.target, limitation.sharp),
            "blurred": _panel("blurred", limitation.target, limitation.blurred),
            "sharp_psnr": psnr(limitation.sharp, limitation.target),
            "blurred_psnr": psnr(limitation.blurred, limitation.target),
            "sharp_ssim": ssim(limitation.sharp, limitation.target),
            "blurred_ssim": ssim(limitation.blurred, limitation.target),
        }

    return template.render(
        title=title,
        reports=reports,
        panels=[_panel(v.view, v.target, v.predicted) for v in views],
        demo=demo,
    )


def write_report(path: str, reports: Sequence[MetricReport], views: Sequence[ReportView],
                 limitation: Optional[PsnrLimitationPair] = None) -> None:
    html = generate_report_html(reports, views, limitation=limitation)
    with open(path, "w") as f:
        f.write(html)
