#!/usr/bin/env python
# coding: utf8
#
# Copyright (c) 2026 Centre National d'Etudes Spatiales (CNES).
#
# This file is part of qpolicy
# (see https://github.com/CNES/qpolicy).
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
#
"""
Helpers shared testing generic module:
contains global shared generic functions for tests/*.py
"""

# Standard imports
import os

# Third party imports
import numpy as np

# qpolicy imports
from qpolicy.core.network import PolicyNet, QuantConfig


def get_test_data_path(test_name: str) -> str:
    """
    Return full absolute path to module tests data

    :param test_name: name of test file or directory
    :returns: full absolute path to source tests data.
    """
    test_data_folder = os.path.join(os.path.dirname(__file__), "data")
    return os.path.join(test_data_folder, test_name)


def get_temporary_dir() -> str:
    """
    Returns path to temporary dir from TESTS_TMP_DIR environment
    variable. Defaults to /tmp
    :returns: path to tmp dir
    """
    if "TESTS_TMP_DIR" not in os.environ:
        # return default tmp dir
        return "/tmp"
    # return env defined tmp dir
    return os.environ["TESTS_TMP_DIR"]


def random_policy(
    rng: np.random.Generator,
    obs_dim: int = 3,
    action_dim: int = 1,
    width: int = 8,
    bits=None,
    sigma_branch: bool = False,
    warmup_samples: int = 64,
) -> PolicyNet:
    """
    Frozen policy with random weights, normalizer statistics and calibrated
    activation scales

    :param rng: random generator
    :param bits: (bits_in, bits_core, bits_out), None for an FP32 policy
    :returns: frozen PolicyNet
    """
    quant_config = None
    if bits is not None:
        quant_config = QuantConfig(
            bits_in=bits[0],
            bits_core=bits[1],
            bits_out=bits[2],
            warmup_steps=1,
        )
    net = PolicyNet(
        obs_dim,
        action_dim,
        width=width,
        quant_config=quant_config,
        sigma_branch=sigma_branch,
        seed=int(rng.integers(2**31)),
    )
    obs = rng.normal(
        loc=rng.uniform(-1, 1, obs_dim),
        scale=rng.uniform(0.5, 2.0, obs_dim),
        size=(warmup_samples, obs_dim),
    )
    net.normalizer.update(obs)
    if net.quantized:
        net.forward(obs, calibrate=True)
    net.freeze()
    return net


def random_observations(
    rng: np.random.Generator, net: PolicyNet, samples: int = 100
) -> np.ndarray:
    """Raw observations spread around the normalizer statistics"""
    std = np.sqrt(net.normalizer.var)
    return net.normalizer.mean + std * rng.normal(
        scale=1.5, size=(samples, net.obs_dim)
    )
