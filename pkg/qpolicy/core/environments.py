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
Deterministic continuous-control environments.

Environments are stateless: the full state is the observation, step maps
(state, action) to (next_state, reward, done) and works on single states
as well as on batches (leading dimension), which lets evaluation run many
episodes in lock-step. Actions outside [-1, 1] are clipped.
"""

# Standard imports
from abc import ABC, abstractmethod

# Third party imports
import numpy as np


class Environment(ABC):
    """Environment interface"""

    name = "environment"
    state_dim = 0
    action_dim = 0
    max_episode_steps = 200

    @abstractmethod
    def reset(self, seed: int) -> np.ndarray:
        """Initial state drawn deterministically from seed"""

    @abstractmethod
    def step(self, state: np.ndarray, action: np.ndarray) -> tuple:
        """
        One transition

        Parameters
        ----------
        state: np.ndarray
            Current state(s), shape (state_dim,) or (N, state_dim)
        action: np.ndarray
            Action(s) in [-1, 1] (clipped otherwise)

        Returns
        -------
        next_state: np.ndarray
        reward: float or np.ndarray
            Reward of the pre-step state and action
        done: bool or np.ndarray
            Terminal flag (time limits are handled by the caller)
        """

    def reset_batch(self, seeds) -> np.ndarray:
        """Stack of initial states, one per seed"""
        return np.stack([self.reset(int(seed)) for seed in seeds])


def angle_normalize(theta: np.ndarray) -> np.ndarray:
    """Wrap angles to [-pi, pi)"""
    return ((theta + np.pi) % (2 * np.pi)) - np.pi


class Pendulum(Environment):
    """
    Torque-limited pendulum swing-up. State (cos theta, sin theta,
    theta_dot) with theta = 0 upright, reward
    -(theta^2 + 0.1 theta_dot^2 + 0.001 u^2) with u the applied torque.
    """

    name = "pendulum"
    state_dim = 3
    action_dim = 1

    def __init__(
        self,
        max_episode_steps: int = 200,
        dt: float = 0.05,
        gravity: float = 10.0,
        mass: float = 1.0,
        length: float = 1.0,
        max_torque: float = 2.0,
        max_speed: float = 8.0,
    ) -> None:
        self.max_episode_steps = int(max_episode_steps)
        self.dt = dt
        self.gravity = gravity
        self.mass = mass
        self.length = length
        self.max_torque = max_torque
        self.max_speed = max_speed

    @staticmethod
    def make_state(theta, theta_dot) -> np.ndarray:
        """Observation of an angle and an angular velocity"""
        theta = np.asarray(theta, dtype=np.float64)
        theta_dot = np.asarray(theta_dot, dtype=np.float64)
        return np.stack([np.cos(theta), np.sin(theta), theta_dot], axis=-1)

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        theta = rng.uniform(-np.pi, np.pi)
        theta_dot = rng.uniform(-1.0, 1.0)
        return self.make_state(theta, theta_dot)

    def step(self, state: np.ndarray, action: np.ndarray) -> tuple:
        state = np.asarray(state, dtype=np.float64)
        action = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        theta = np.arctan2(state[..., 1], state[..., 0])
        theta_dot = state[..., 2]
        torque = self.max_torque * action[..., 0]

        reward = -(
            angle_normalize(theta) ** 2
            + 0.1 * theta_dot**2
            + 0.001 * torque**2
        )

        new_theta_dot = theta_dot + self.dt * (
            3 * self.gravity / (2 * self.length) * np.sin(theta)
            + 3.0 / (self.mass * self.length**2) * torque
        )
        new_theta_dot = np.clip(new_theta_dot, -self.max_speed, self.max_speed)
        new_theta = theta + new_theta_dot * self.dt

        done = np.zeros(np.shape(reward), dtype=bool)
        return self.make_state(new_theta, new_theta_dot), reward, done


class PointMass(Environment):
    """
    Planar point mass driven to the origin. State (x, y, vx, vy), action
    is an acceleration, reward -|pos|^2 - 0.001 |u|^2.
    """

    name = "pointmass"
    state_dim = 4
    action_dim = 2

    def __init__(
        self,
        max_episode_steps: int = 200,
        dt: float = 0.05,
        max_speed: float = 2.0,
    ) -> None:
        self.max_episode_steps = int(max_episode_steps)
        self.dt = dt
        self.max_speed = max_speed

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        position = rng.uniform(-1.0, 1.0, size=2)
        return np.concatenate([position, np.zeros(2)])

    def step(self, state: np.ndarray, action: np.ndarray) -> tuple:
        state = np.asarray(state, dtype=np.float64)
        action = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        position = state[..., :2]
        velocity = state[..., 2:]

        reward = -np.sum(position**2, axis=-1) - 0.001 * np.sum(
            action**2, axis=-1
        )

        velocity = np.clip(
            velocity + self.dt * action, -self.max_speed, self.max_speed
        )
        position = position + self.dt * velocity

        done = np.zeros(np.shape(reward), dtype=bool)
        return np.concatenate([position, velocity], axis=-1), reward, done


def env_pendulum(**kwargs) -> Pendulum:
    """Pendulum swing-up environment"""
    return Pendulum(**kwargs)


def env_pointmass(**kwargs) -> PointMass:
    """Point-mass regulation environment"""
    return PointMass(**kwargs)
