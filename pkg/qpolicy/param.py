#!/usr/bin/env python
# coding: utf8
#
# Copyright (C) 2026 CNES.
#
# This file is part of qpolicy
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
Parameters for qpolicy tool
"""

from .core.environments import env_pendulum, env_pointmass

ENVIRONMENTS = {"pendulum": env_pendulum, "pointmass": env_pointmass}

ALGORITHMS = ["sac", "ddpg"]

_PAPER_SAC = {
    "algorithm": "sac",
    "total_steps": 1_000_000,
    "buffer_size": 1_000_000,
    "gamma": 0.99,
    "tau": 0.005,
    "batch_size": 256,
    "learning_starts": 5_000,
    "policy_lr": 3e-4,
    "q_lr": 1e-3,
    "policy_update_freq": 2,
    "target_update_freq": 1,
    "entropy_mode": "autotune",
    "eval_every": 10_000,
    "eval_episodes": 10,
}

_PAPER_DDPG = {
    "algorithm": "ddpg",
    "total_steps": 1_000_000,
    "buffer_size": 1_000_000,
    "gamma": 0.99,
    "tau": 0.005,
    "batch_size": 256,
    "learning_starts": 25_000,
    "policy_lr": 3e-4,
    "q_lr": 3e-4,
    "policy_update_freq": 2,
    # targets follow the policy updates
    "target_update_freq": 2,
    "exploration_noise_std": 0.1,
    "eval_every": 10_000,
    "eval_episodes": 10,
}

_DESK = {
    "total_steps": 50_000,
    "buffer_size": 50_000,
    "learning_starts": 1_000,
    "eval_every": 5_000,
    "eval_episodes": 10,
}

TRAIN_PRESETS = {
    "paper": {"sac": _PAPER_SAC, "ddpg": _PAPER_DDPG},
    "desk": {
        "sac": {**_PAPER_SAC, **_DESK},
        "ddpg": {**_PAPER_DDPG, **_DESK},
    },
}

# Quantizer groups swept one at a time, the others staying at 8 bits
SCOPES = ["all", "input", "output", "core"]

FIXED_BITS = 8

WIDTHS = [256, 128, 64, 32, 16]

CORE_BITS = [8, 7, 6, 5, 4, 3, 2]

INPUT_BITS = [8, 7, 6, 5, 4, 3, 2]

OUTPUT_BITS = 8

DEFAULT_SEEDS = 5

NOISE_SIGMAS = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]

THROUGHPUT_TARGETS = [1e3, 1e4, 1e5, 1e6, 1e7]

CLOCK_HZ = 1e8

# (observation dim, action dim) of the MuJoCo tasks
MUJOCO_DIMS = {
    "Hopper": (11, 3),
    "Walker2d": (17, 6),
    "HalfCheetah": (17, 6),
    "Ant": (27, 8),
    "Humanoid": (376, 17),
}

# Selected (width, core bits, input bits) of the MuJoCo policies
MUJOCO_SELECTIONS = {
    "Humanoid": (16, 3, 4),
    "Walker2d": (128, 2, 3),
    "Ant": (64, 2, 3),
    "HalfCheetah": (256, 3, 8),
    "Hopper": (16, 2, 6),
}

# Abstract resource budgets for folding_search
RESOURCE_BUDGETS = {
    "unlimited": {},
    "small": {
        "mac_units": 4096,
        "threshold_words": 200_000,
        "weight_bits": 1_000_000,
    },
}
