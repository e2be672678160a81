# Copyright (c) 2026, the geossl authors. All rights reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Offline city-tile self-supervision: geospatial sampling, synthetic tiles,
momentum-contrast and self-distillation training ops, and the experiment
harness, exposed from the C++ core."""

from ._core import (  # noqa: F401
    GeosslError,
    build_manifest_json,
    build_request,
    compute_radius,
    cosine_lr,
    ground_resolution,
    haversine_m,
    info_nce,
    make_views,
    render_tile,
    run_experiment,
    sample_points,
    step_lr,
    teacher_distribution,
    __version__,
)

__all__ = [
    "GeosslError",
    "build_manifest_json",
    "build_request",
    "compute_radius",
    "cosine_lr",
    "ground_resolution",
    "haversine_m",
    "info_nce",
    "make_views",
    "render_tile",
    "run_experiment",
    "sample_points",
    "step_lr",
    "teacher_distribution",
    "__version__",
]
