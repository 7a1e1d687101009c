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
Ring-buffer storage of transitions for off-policy training.
"""

# Third party imports
import numpy as np


class ReplayBuffer:
    """Fixed-capacity FIFO store of (s, a, r, s', done) transitions"""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        if capacity < 1:
            raise ValueError(
                f"Replay buffer capacity should be >= 1. Found {capacity}."
            )
        self.capacity = int(capacity)
        self.states = np.zeros((capacity, state_dim), dtype=np.float64)
        self.actions = np.zeros((capacity, action_dim), dtype=np.float64)
        self.rewards = np.zeros(capacity, dtype=np.float64)
        self.next_states = np.zeros((capacity, state_dim), dtype=np.float64)
        self.dones = np.zeros(capacity, dtype=np.float64)
        self.position = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, state, action, reward, next_state, done) -> None:
        """Insert one transition, evicting the oldest at capacity"""
        self.states[self.position] = state
        self.actions[self.position] = action
        self.rewards[self.position] = reward
        self.next_states[self.position] = next_state
        self.dones[self.position] = float(done)
        self.position = (self.position + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> tuple:
        """
        Uniform batch, without replacement within the batch

        Returns
        -------
        batch: tuple
            (states, actions, rewards, next_states, dones)
        """
        if self.size == 0:
            raise ValueError("Cannot sample from an empty replay buffer.")
        indexes = rng.choice(
            self.size, size=min(batch_size, self.size), replace=False
        )
        return (
            self.states[indexes],
            self.actions[indexes],
            self.rewards[indexes],
            self.next_states[indexes],
            self.dones[indexes],
        )
