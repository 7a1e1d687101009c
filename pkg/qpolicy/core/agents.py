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
Off-policy training (DDPG, SAC) of fake-quantized policies with FP32
critics, and deterministic evaluation rollouts.

Training follows the usual single-file actor-critic loop: random actions
until learning_starts, critic update at every step afterwards, delayed
policy updates and Polyak-averaged target networks.
"""
# pylint: disable=too-many-instance-attributes,too-many-locals

# Standard imports
import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional

# Third party imports
import numpy as np
import pandas as pd

# qpolicy imports
from ..tools.handlers import EvalReport
from .environments import Environment
from .network import DenseNet, PolicyNet, update_normalizer
from .optimizer import Adam
from .replay_buffer import ReplayBuffer

ALGORITHMS = ["ddpg", "sac"]
ENTROPY_MODES = ["autotune", "fixed"]

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
TANH_EPSILON = 1e-6

# Episode i of an evaluation seeded with s resets with s * 10007 + i
EPISODE_SEED_STRIDE = 10007

CURVE_COLUMNS = ["step", "seed", "mean_return", "std_return"]


class TrainingDivergedError(RuntimeError):
    """Raised when a training loss becomes NaN or infinite"""


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run"""

    algorithm: str = "sac"
    total_steps: int = 50_000
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 256
    buffer_size: int = 50_000
    learning_starts: int = 1_000
    policy_lr: float = 3e-4
    q_lr: float = 1e-3
    policy_update_freq: int = 2
    target_update_freq: int = 1
    exploration_noise_std: float = 0.1
    entropy_mode: str = "autotune"
    alpha: float = 0.2
    critic_width: int = 256
    eval_every: int = 5_000
    eval_episodes: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(
                f"TrainConfig 'algorithm' should be in {ALGORITHMS}. "
                f"Found '{self.algorithm}'."
            )
        if self.entropy_mode not in ENTROPY_MODES:
            raise ValueError(
                f"TrainConfig 'entropy_mode' should be in {ENTROPY_MODES}. "
                f"Found '{self.entropy_mode}'."
            )
        for name in (
            "batch_size",
            "buffer_size",
            "policy_update_freq",
            "target_update_freq",
            "critic_width",
            "eval_episodes",
        ):
            if getattr(self, name) < 1:
                raise ValueError(
                    f"TrainConfig '{name}' should be >= 1. "
                    f"Found {getattr(self, name)}."
                )
        for name in ("total_steps", "learning_starts", "eval_every"):
            if getattr(self, name) < 0:
                raise ValueError(
                    f"TrainConfig '{name}' should be >= 0. "
                    f"Found {getattr(self, name)}."
                )
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(
                f"TrainConfig 'gamma' should be in [0, 1]. Found {self.gamma}."
            )
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(
                f"TrainConfig 'tau' should be in ]0, 1]. Found {self.tau}."
            )
        for name in ("policy_lr", "q_lr", "alpha"):
            if getattr(self, name) <= 0:
                raise ValueError(
                    f"TrainConfig '{name}' should be positive. "
                    f"Found {getattr(self, name)}."
                )
        if self.exploration_noise_std < 0:
            raise ValueError(
                "TrainConfig 'exploration_noise_std' should be >= 0."
            )

    def to_dict(self) -> dict:
        """Plain dictionary (JSON compatible)"""
        return asdict(self)


def episode_seed(seed: int, episode: int) -> int:
    """Reset seed of one evaluation episode"""
    return int(seed) * EPISODE_SEED_STRIDE + int(episode)


def soft_update(
    target: Dict[str, np.ndarray], online: Dict[str, np.ndarray], tau: float
) -> None:
    """In place: target <- (1 - tau) * target + tau * online"""
    for key, value in target.items():
        value[...] = (1.0 - tau) * value + tau * online[key]


def _check_finite(step: int, name: str, value: float, net: PolicyNet):
    if not np.isfinite(value):
        scales = {
            key: state.spec.scale for key, state in net.scale_states.items()
        }
        raise TrainingDivergedError(
            f"Loss '{name}' is {value} at step {step}. "
            f"Activation scales: {scales}"
        )


def _concat(features: np.ndarray, actions: np.ndarray) -> np.ndarray:
    return np.concatenate([features, np.atleast_2d(actions)], axis=1)


def evaluate(
    policy,
    env: Environment,
    episodes: int,
    seed: int,
    noise_sigma: float = 0.0,
    noise_seed: Optional[int] = None,
) -> EvalReport:
    """
    Deterministic rollouts of a policy, run in lock-step.

    Parameters
    ----------
    policy: PolicyNet or IntegerPolicy
        Anything with act(obs, obs_noise=None) on batches of observations
    env: Environment
        Environment
    episodes: int
        Number of episodes
    seed: int
        Evaluation seed (episode resets use episode_seed(seed, i))
    noise_sigma: float (default=0.)
        Standard deviation of the Gaussian noise added to normalized
        observations (0 disables noise)
    noise_seed: int (default=None)
        Seed of the noise stream, independent of the resets (defaults to
        seed)

    Returns
    -------
    report: EvalReport
        Undiscounted returns
    """
    if episodes < 1:
        raise ValueError(f"'episodes' should be >= 1. Found {episodes}.")
    if noise_sigma < 0:
        raise ValueError(f"'noise_sigma' should be >= 0. Found {noise_sigma}.")

    noise_rng = np.random.default_rng(
        seed if noise_seed is None else noise_seed
    )
    states = env.reset_batch([episode_seed(seed, i) for i in range(episodes)])
    returns = np.zeros(episodes, dtype=np.float64)
    alive = np.ones(episodes, dtype=bool)

    for _ in range(env.max_episode_steps):
        obs_noise = None
        if noise_sigma > 0:
            obs_noise = noise_sigma * noise_rng.standard_normal(states.shape)
        actions = policy.act(states, obs_noise=obs_noise)
        states, rewards, done = env.step(states, actions)
        returns += np.where(alive, rewards, 0.0)
        alive &= ~np.asarray(done, dtype=bool)
        if not alive.any():
            break

    return EvalReport.from_returns(returns, seed=seed)


class Trainer:
    """
    One training run. Keeps the per-update loss history next to the
    learning curve.
    """

    def __init__(
        self, config: TrainConfig, net: PolicyNet, env: Environment
    ) -> None:
        if net.obs_dim != env.state_dim or net.action_dim != env.action_dim:
            raise ValueError(
                f"Policy dimensions {net.obs_dim}->{net.action_dim} do not "
                f"match the environment {env.state_dim}->{env.action_dim}."
            )
        if config.algorithm == "sac" and net.sigma_branch is None:
            raise ValueError("SAC training needs a policy with a sigma branch.")

        self.config = config
        self.net = net
        self.env = env

        init_ss, explore_ss, replay_ss, env_ss = np.random.SeedSequence(
            config.seed
        ).spawn(4)
        init_rng = np.random.default_rng(init_ss)
        self.explore_rng = np.random.default_rng(explore_ss)
        self.replay_rng = np.random.default_rng(replay_ss)
        self.env_rng = np.random.default_rng(env_ss)

        critic_sizes = [
            env.state_dim + env.action_dim,
            config.critic_width,
            config.critic_width,
            1,
        ]
        num_critics = 2 if config.algorithm == "sac" else 1
        self.critics: List[DenseNet] = [
            DenseNet(critic_sizes, init_rng) for _ in range(num_critics)
        ]
        self.critic_targets = [critic.copy() for critic in self.critics]
        self.critic_optimizers = [
            Adam(critic.params, lr=config.q_lr) for critic in self.critics
        ]
        self.actor_optimizer = Adam(net.parameters(), lr=config.policy_lr)

        self.actor_target: Optional[PolicyNet] = None
        if config.algorithm == "ddpg":
            self.actor_target = net.copy()
            # the target reads observations through the online statistics
            self.actor_target.normalizer = net.normalizer

        self.target_entropy = -float(env.action_dim)
        self.log_alpha = {"log_alpha": np.zeros(1, dtype=np.float64)}
        if config.entropy_mode == "fixed":
            self.log_alpha["log_alpha"][0] = np.log(config.alpha)
        self.alpha_optimizer = Adam(self.log_alpha, lr=config.q_lr)

        self.buffer = ReplayBuffer(
            config.buffer_size, env.state_dim, env.action_dim
        )
        self.num_updates = 0
        self.losses: List[dict] = []
        self.curve = pd.DataFrame(columns=CURVE_COLUMNS)

    @property
    def alpha(self) -> float:
        """Entropy temperature"""
        return float(np.exp(self.log_alpha["log_alpha"][0]))

    # ------------------------------------------------------------------ #
    # Acting
    # ------------------------------------------------------------------ #

    def sample_action(
        self, obs: np.ndarray, calibrate: bool = False
    ) -> tuple:
        """
        Reparameterized tanh-Gaussian sample of the SAC policy

        Returns
        -------
        action: np.ndarray
        log_prob: np.ndarray
            Log-density of the squashed sample, shape (N,)
        record: dict
            Everything the actor backward pass needs
        """
        _, tape = self.net.forward(obs, calibrate=calibrate)
        raw_log_std, sigma_cache = self.net.sigma_branch.forward(tape.features)
        log_std = np.clip(raw_log_std, LOG_STD_MIN, LOG_STD_MAX)
        std = np.exp(log_std)
        eps = self.explore_rng.standard_normal(tape.mu.shape)
        action = np.tanh(tape.mu + std * eps)
        log_prob = np.sum(
            -0.5 * eps**2
            - log_std
            - 0.5 * np.log(2.0 * np.pi)
            - np.log(1.0 - action**2 + TANH_EPSILON),
            axis=1,
        )
        record = {
            "tape": tape,
            "sigma_cache": sigma_cache,
            "log_std_mask": (raw_log_std > LOG_STD_MIN)
            & (raw_log_std < LOG_STD_MAX),
            "std": std,
            "eps": eps,
        }
        return action, log_prob, record

    def explore(self, obs: np.ndarray, step: int) -> np.ndarray:
        """Action used to collect one transition"""
        if step < self.config.learning_starts:
            return self.explore_rng.uniform(-1.0, 1.0, self.env.action_dim)
        if self.config.algorithm == "sac":
            return self.sample_action(obs)[0][0]
        action = self.net.act(obs)[0]
        noise = self.explore_rng.normal(
            0.0, self.config.exploration_noise_std, self.env.action_dim
        )
        return np.clip(action + noise, -1.0, 1.0)

    # ------------------------------------------------------------------ #
    # Updates
    # ------------------------------------------------------------------ #

    def _critic_update(self, step: int, batch: tuple) -> float:
        states, actions, rewards, next_states, dones = batch
        features = self.net.features(states)
        next_features = self.net.features(next_states)

        if self.config.algorithm == "sac":
            next_actions, next_log_prob, _ = self.sample_action(next_states)
            next_q = np.minimum.reduce(
                [
                    target(_concat(next_features, next_actions))[:, 0]
                    for target in self.critic_targets
                ]
            )
            next_q = next_q - self.alpha * next_log_prob
        else:
            next_actions = self.actor_target.act(next_states)
            next_q = self.critic_targets[0](
                _concat(next_features, next_actions)
            )[:, 0]

        targets = rewards + self.config.gamma * (1.0 - dones) * next_q
        inputs = _concat(features, actions)
        total = 0.0
        for critic, optimizer in zip(self.critics, self.critic_optimizers):
            q_values, cache = critic.forward(inputs)
            error = q_values[:, 0] - targets
            loss = float(np.mean(error**2))
            _check_finite(step, "critic", loss, self.net)
            grads, _ = critic.backward(
                cache, (2.0 * error / error.size)[:, None]
            )
            optimizer.step(grads)
            total += loss
        return total

    def _actor_grads_from_critics(
        self, features: np.ndarray, actions: np.ndarray
    ) -> tuple:
        """min over critics of Q(s, a) and its gradient wrt a"""
        inputs = _concat(features, actions)
        outputs = [critic.forward(inputs) for critic in self.critics]
        q_values = np.stack([q[:, 0] for q, _ in outputs])
        chosen = np.argmin(q_values, axis=0)
        grad_actions = np.zeros_like(actions)
        for index, (critic, (_, cache)) in enumerate(
            zip(self.critics, outputs)
        ):
            weight = (chosen == index).astype(np.float64)[:, None]
            _, grad_inputs = critic.backward(cache, weight)
            grad_actions += grad_inputs[:, features.shape[1] :]
        return q_values[chosen, np.arange(chosen.size)], grad_actions

    def _ddpg_actor_update(self, step: int, states: np.ndarray) -> float:
        actions, tape = self.net.forward(states, calibrate=True)
        q_values, grad_q = self._actor_grads_from_critics(
            tape.features, actions
        )
        loss = -float(np.mean(q_values))
        _check_finite(step, "actor", loss, self.net)
        grads = self.net.backward(tape, -grad_q / q_values.size, wrt="action")
        self.actor_optimizer.step(grads)
        self.net.sync_scales()
        return loss

    def _sac_actor_update(self, step: int, states: np.ndarray) -> float:
        alpha = self.alpha
        actions, log_prob, record = self.sample_action(states, calibrate=True)
        tape = record["tape"]
        size = log_prob.size
        q_values, grad_q = self._actor_grads_from_critics(
            tape.features, actions
        )
        loss = float(np.mean(alpha * log_prob - q_values))
        _check_finite(step, "actor", loss, self.net)

        squash = 1.0 - actions**2
        grad_actions = -grad_q / size + (alpha / size) * 2.0 * actions / (
            squash + TANH_EPSILON
        )
        grad_u = grad_actions * squash
        grad_log_std = grad_u * record["std"] * record["eps"] - alpha / size

        grads = self.net.backward(tape, grad_u, wrt="mu")
        sigma_grads, _ = self.net.sigma_branch.backward(
            record["sigma_cache"], grad_log_std * record["log_std_mask"]
        )
        for key, value in sigma_grads.items():
            grads[f"sigma.{key}"] = value
        self.actor_optimizer.step(grads)
        self.net.sync_scales()

        if self.config.entropy_mode == "autotune":
            grad_log_alpha = -alpha * float(
                np.mean(log_prob + self.target_entropy)
            )
            self.alpha_optimizer.step(
                {"log_alpha": np.array([grad_log_alpha])}
            )
        return loss

    def update(self, step: int) -> dict:
        """One gradient step of the critics, plus delayed policy updates"""
        config = self.config
        batch = self.buffer.sample(config.batch_size, self.replay_rng)
        record = {"update": self.num_updates, "step": step}
        record["critic_loss"] = self._critic_update(step, batch)

        if step % config.policy_update_freq == 0:
            repeats = config.policy_update_freq
            if config.algorithm == "ddpg":
                repeats = 1
            for _ in range(repeats):
                if config.algorithm == "sac":
                    record["actor_loss"] = self._sac_actor_update(
                        step, batch[0]
                    )
                else:
                    record["actor_loss"] = self._ddpg_actor_update(
                        step, batch[0]
                    )

        if step % config.target_update_freq == 0:
            for target, critic in zip(self.critic_targets, self.critics):
                soft_update(target.params, critic.params, config.tau)
            if self.actor_target is not None:
                soft_update(
                    self.actor_target.params, self.net.params, config.tau
                )
                if self.actor_target.quantized:
                    self.actor_target.sync_scales()

        record["alpha"] = self.alpha
        self.num_updates += 1
        self.losses.append(record)
        return record

    # ------------------------------------------------------------------ #
    # Main loop
    # ------------------------------------------------------------------ #

    def _new_episode(self) -> np.ndarray:
        return self.env.reset(int(self.env_rng.integers(0, 2**31 - 1)))

    def _evaluate_snapshot(self, step: int) -> None:
        snapshot = self.net.copy()
        snapshot.freeze()
        report = evaluate(
            snapshot, self.env, self.config.eval_episodes, self.config.seed
        )
        logging.info(
            f"Step {step}: evaluation return {report.mean:.2f} "
            f"+/- {report.std:.2f}"
        )
        row = pd.DataFrame(
            [[step, self.config.seed, report.mean, report.std]],
            columns=CURVE_COLUMNS,
        )
        self.curve = (
            row if self.curve.empty else pd.concat([self.curve, row])
        ).reset_index(drop=True)

    def run(self) -> tuple:
        """
        Train the policy

        Returns
        -------
        net: PolicyNet
            Trained policy, frozen
        curve: pd.DataFrame
            Learning curve (step, seed, mean_return, std_return)
        """
        config = self.config
        logging.info(
            f"Training {config.algorithm.upper()} on {self.env.name} for "
            f"{config.total_steps} steps (seed {config.seed})"
        )
        obs = self._new_episode()
        episode_length = 0

        for step in range(config.total_steps):
            update_normalizer(self.net.normalizer, obs)
            action = self.explore(obs, step)
            next_obs, reward, done = self.env.step(obs, action)
            self.buffer.add(obs, action, reward, next_obs, done)
            episode_length += 1

            if bool(done) or episode_length >= self.env.max_episode_steps:
                obs = self._new_episode()
                episode_length = 0
            else:
                obs = next_obs

            if step >= config.learning_starts:
                self.update(step)

            if config.eval_every and (step + 1) % config.eval_every == 0:
                self._evaluate_snapshot(step + 1)

        self.net.freeze()
        self.curve = self.curve.astype(
            {
                "step": np.int64,
                "seed": np.int64,
                "mean_return": np.float64,
                "std_return": np.float64,
            }
        )
        return self.net, self.curve


def train(config: TrainConfig, net: PolicyNet, env: Environment) -> tuple:
    """
    Train a policy with DDPG or SAC

    Parameters
    ----------
    config: TrainConfig
        Hyperparameters
    net: PolicyNet
        Policy to train (modified in place); SAC needs a sigma branch
    env: Environment
        Environment

    Returns
    -------
    net: PolicyNet
        Trained, frozen policy
    curve: pd.DataFrame
        Learning curve (step, seed, mean_return, std_return)
    """
    return Trainer(config, net, env).run()
