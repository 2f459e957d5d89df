# Copyright 2026 The USKT Authors. All Rights Reserved.
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


"""Python bindings for the USKT C++ core."""

import json as _json

from ._uskt import (
    Error,
    FormatError,
    Model,
    NumericError,
    ShapeError,
    cross_entropy,
    focal_loss,
    gradcheck,
    read_events,
    scan,
    ssm_params,
    synthetic_dataset,
    voxelize,
    write_events,
)
from ._uskt import train as _train


def train(config=None, **overrides):
    """Runs a training job.

    ``config`` is a run-configuration dict (or JSON string); keyword
    arguments are merged into its top level.
    """
    if config is None:
        config = {}
    if isinstance(config, str):
        config = _json.loads(config)
    config = {**config, **overrides}
    return _train(_json.dumps(config))


__all__ = [
    "Error",
    "FormatError",
    "Model",
    "NumericError",
    "ShapeError",
    "cross_entropy",
    "focal_loss",
    "gradcheck",
    "read_events",
    "scan",
    "ssm_params",
    "synthetic_dataset",
    "train",
    "voxelize",
    "write_events",
]
