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

"""Setup tools"""

from setuptools import setup, find_packages

with open("README.md", "r") as fh:
    long_description = fh.read()

setup(
    name="domefield",
    version="v0.1.0",
    packages=find_packages(exclude=["tests", "examples", "examples.*"]),
    install_requires=[
        "numpy", "scipy", "scikit-image>=0.19", "imageio", "tqdm", "jinja2",
    ],
    include_package_data=True,
    description='Dome-supervised dynamic radiance fields on synthetic scenes.',
    long_description=long_description,
    long_description_content_type="text/markdown",
    package_data={
        "domefield": [
            "templates/report.html",
        ],
    },
    entry_points={
        "console_scripts": [
            "domefield=domefield.cli:main",
        ],
    },
)
